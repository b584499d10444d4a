//! Evaluation metrics: PSNR, KID over pluggable feature vectors, and
//! attention-localization and background-preservation scores against
//! ground-truth foreground masks.

use candle_core::{DType, Tensor};
use image::RgbImage;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, invalid, Result};
use crate::masks::{AttentionMaskSet, ImageBatch};
use crate::tensor::{scalar, to_f64_vec};

/// Stand-in for an infinite PSNR in serialized reports.
pub const PSNR_INF_SENTINEL: f64 = 1e9;

/// Peak-to-peak range of images normalized to `[-1, 1]`.
pub const NORMALIZED_PEAK: f64 = 2.0;

pub const KID_SUBSET_SIZE: usize = 50;
pub const KID_SUBSETS: usize = 10;

/// Replaces an infinite PSNR with [`PSNR_INF_SENTINEL`].
pub fn serializable_db(db: f64) -> f64 {
    if db.is_infinite() && db > 0.0 {
        PSNR_INF_SENTINEL
    } else {
        db
    }
}

fn db_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// `10 log10(peak^2 / MSE)`, `+inf` when the images are identical.
pub fn psnr(a: &ImageBatch, b: &ImageBatch, peak: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(invalid!("psnr operands differ in shape: {:?} vs {:?}", a.dims(), b.dims()));
    }
    if !(peak.is_finite() && peak > 0.0) {
        return Err(invalid!("psnr peak must be positive, got {peak}"));
    }
    let diff = (a.tensor().to_dtype(DType::F64)? - b.tensor().to_dtype(DType::F64)?)?;
    let mse = scalar(&diff.sqr()?.mean_all()?)?;
    Ok(db_from_mse(mse, peak))
}

fn mask_to_f64(mask: &Tensor, b: usize, h: usize, w: usize) -> Result<Tensor> {
    let n = mask.elem_count();
    if n != b * h * w {
        return Err(invalid!("mask shape {:?} does not cover a {b}x{h}x{w} batch", mask.dims()));
    }
    Ok(mask.to_dtype(DType::F64)?.reshape((b, 1, h, w))?)
}

/// PSNR restricted to pixels where `gt_mask` is 0. `gt_mask` holds one
/// value per pixel, `(B, 1, H, W)` or `(B, H, W)`.
pub fn background_psnr(x: &ImageBatch, gx: &ImageBatch, gt_mask: &Tensor, peak: f64) -> Result<f64> {
    if x.dims() != gx.dims() {
        return Err(invalid!("background_psnr operands differ in shape: {:?} vs {:?}", x.dims(), gx.dims()));
    }
    let (b, c, h, w) = x.dims();
    let background = (1.0 - mask_to_f64(gt_mask, b, h, w)?.ge(0.5)?.to_dtype(DType::F64)?)?;
    let count = scalar(&background.sum_all()?)? * c as f64;
    if count == 0.0 {
        return Err(invalid!("mask leaves no background pixels"));
    }
    let diff = (x.tensor().to_dtype(DType::F64)? - gx.tensor().to_dtype(DType::F64)?)?;
    let sse = scalar(&diff.sqr()?.broadcast_mul(&background)?.sum_all()?)?;
    Ok(db_from_mse(sse / count, peak))
}

/// Share of total foreground attention falling inside the ground-truth
/// foreground; 0 when there is no foreground attention at all.
pub fn attention_localization(attn: &AttentionMaskSet, gt_mask: &Tensor) -> Result<f64> {
    let dims = attn.tensor().dims();
    let (b, h, w) = (dims[0], dims[2], dims[3]);
    let gt = mask_to_f64(gt_mask, b, h, w)?.ge(0.5)?.to_dtype(DType::F64)?;
    let fg = attn.foreground_total()?.to_dtype(DType::F64)?.reshape((b, 1, h, w))?;
    let denominator = scalar(&fg.sum_all()?)?;
    if denominator <= 0.0 {
        return Ok(0.0);
    }
    let numerator = scalar(&(&fg * &gt)?.sum_all()?)?;
    Ok((numerator / denominator).clamp(0.0, 1.0))
}

/// Feature vectors of a sample set, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    rows: Vec<Vec<f64>>,
    dim: usize,
    extractor_id: String,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f64>>, extractor_id: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid!("feature rows differ in length"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid!("feature set contains non-finite entries"));
        }
        Ok(Self {
            rows,
            dim,
            extractor_id: extractor_id.into(),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn extractor_id(&self) -> &str {
        &self.extractor_id
    }
}

/// Maps images to feature vectors for KID.
pub trait FeatureExtractor {
    fn id(&self) -> &str;
    fn extract(&self, images: &[RgbImage]) -> Result<FeatureSet>;
}

/// Per-channel intensity histograms, normalized to unit mass per channel.
#[derive(Debug, Clone)]
pub struct HistogramExtractor {
    pub bins: usize,
}

impl Default for HistogramExtractor {
    fn default() -> Self {
        Self { bins: 64 }
    }
}

impl FeatureExtractor for HistogramExtractor {
    fn id(&self) -> &str {
        "histogram"
    }

    fn extract(&self, images: &[RgbImage]) -> Result<FeatureSet> {
        if self.bins == 0 || self.bins > 256 {
            return Err(config_err!("histogram bins must lie in 1..=256, got {}", self.bins));
        }
        let rows = images
            .iter()
            .map(|img| {
                let mut row = vec![0.0; 3 * self.bins];
                for px in img.pixels() {
                    for c in 0..3 {
                        row[c * self.bins + px[c] as usize * self.bins / 256] += 1.0;
                    }
                }
                let pixels = (img.width() * img.height()).max(1) as f64;
                row.iter_mut().for_each(|v| *v /= pixels);
                row
            })
            .collect();
        FeatureSet::new(rows, self.id())
    }
}

fn poly_kernel(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (dot / u.len() as f64 + 1.0).powi(3)
}

/// Unbiased squared MMD between two equal-size samples with every `i = j`
/// term excluded, including in the cross term.
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]]) -> f64 {
    let m = x.len();
    let mut kxx = 0.0;
    let mut kyy = 0.0;
    let mut kxy = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += poly_kernel(x[i], x[j]);
                kyy += poly_kernel(y[i], y[j]);
                kxy += poly_kernel(x[i], y[j]);
            }
        }
    }
    let pairs = (m * (m - 1)) as f64;
    (kxx + kyy - 2.0 * kxy) / pairs
}

fn canonical(rows: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut sorted: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted
}

/// Kernel inception distance with kernel `(u.v / dim + 1)^3`: mean and
/// population standard deviation of the unbiased squared MMD over
/// `n_subsets` seeded subsets of `subset_size` samples from each set.
///
/// Rows are put in a canonical order first, so the result does not depend
/// on sample order. Subset `s` draws the indices for both sets from one
/// stream, so equal sets give equal subsets.
pub fn kid(fa: &FeatureSet, fb: &FeatureSet, subset_size: usize, n_subsets: usize, seed: u64) -> Result<(f64, f64)> {
    if fa.dim() != fb.dim() {
        return Err(invalid!("feature dimensions differ: {} vs {}", fa.dim(), fb.dim()));
    }
    if subset_size < 2 {
        return Err(config_err!("KID subset size must be at least 2, got {subset_size}"));
    }
    if n_subsets == 0 {
        return Err(config_err!("KID needs at least one subset"));
    }
    let available = fa.num_samples().min(fb.num_samples());
    if subset_size > available {
        return Err(config_err!("KID subset size {subset_size} exceeds the {available} available samples"));
    }
    let a = canonical(fa.rows());
    let b = canonical(fb.rows());
    let mut values = Vec::with_capacity(n_subsets);
    for s in 0..n_subsets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let ia = sample(&mut rng, a.len(), subset_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let ib = sample(&mut rng, b.len(), subset_size);
        let xs: Vec<&[f64]> = ia.iter().map(|i| a[i]).collect();
        let ys: Vec<&[f64]> = ib.iter().map(|i| b[i]).collect();
        values.push(mmd2_unbiased(&xs, &ys));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    Ok((mean, var.sqrt()))
}

/// Summary statistics used in reports.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
}

/// Mean of `f64` values of a tensor; convenience for reports.
pub fn tensor_mean(t: &Tensor) -> Result<f64> {
    let v = to_f64_vec(t)?;
    Ok(v.iter().sum::<f64>() / v.len().max(1) as f64)
}

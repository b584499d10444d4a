//! Attention and content masks, and the fusion algebra that combines them
//! with an input image.
//!
//! Two generation schemes are supported:
//!
//! * [`Scheme::One`]: a single sigmoid attention mask `A` and a single
//!   content image `C`; the output is `C * A + x * (1 - A)`.
//! * [`Scheme::Two`]: `n` softmax-normalized attention masks, of which the
//!   first `n - 1` gate `n - 1` content images and the last one (the
//!   background mask) gates the input image:
//!   `sum_f C_f * A_f + x * A_b`.
//!
//! Single-channel masks are broadcast across the three color channels.
//! Every function here is differentiable end to end through candle's
//! autograd.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};

use crate::error::{invalid, Error, Result};
use crate::tensor::{all_finite, to_f64_vec};

/// Slack allowed on mask values and per-pixel mask sums before fusion
/// rejects them.
pub const MASK_TOLERANCE: f64 = 1e-5;

/// Generation scheme of a generator and of the masks it emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// One attention mask, one content mask, produced by a single network.
    One,
    /// `n` attention masks (background last) and `n - 1` content masks,
    /// produced by separate decoders over a shared encoder.
    Two,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::One => f.write_str("1"),
            Scheme::Two => f.write_str("2"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "I" | "i" | "one" => Ok(Scheme::One),
            "2" | "II" | "ii" | "two" => Ok(Scheme::Two),
            other => Err(Error::Config(format!("unknown scheme {other:?}, expected 1 or 2"))),
        }
    }
}

/// A batch of RGB images, shape `(batch, 3, height, width)`, values in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ImageBatch(Tensor);

impl ImageBatch {
    /// Wraps a tensor after checking its shape. Values are not inspected, so
    /// this is cheap enough to use on intermediate results.
    pub fn new(data: Tensor) -> Result<Self> {
        let dims = data.dims();
        if dims.len() != 4 || dims[1] != 3 {
            return Err(invalid!(
                "image batch must have shape (batch, 3, height, width), got {dims:?}"
            ));
        }
        Ok(Self(data))
    }

    /// Wraps a tensor at an ingestion boundary: shape, finiteness and the
    /// `[-1, 1]` range are all checked.
    pub fn from_normalized(data: Tensor) -> Result<Self> {
        let batch = Self::new(data)?;
        let values = to_f64_vec(&batch.0)?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(invalid!("image batch contains non-finite value {v}"));
        }
        if let Some(v) = values.iter().find(|v| v.abs() > 1.0 + MASK_TOLERANCE) {
            return Err(invalid!("image batch value {v} outside [-1, 1]"));
        }
        Ok(batch)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// `(batch, channels, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.0.dims();
        (d[0], d[1], d[2], d[3])
    }

    pub fn batch_size(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn detach(&self) -> Self {
        Self(self.0.detach())
    }
}

/// Per-pixel attention masks, shape `(batch, n_masks, height, width)`.
///
/// Scheme one holds a single mask in `[0, 1]`. Scheme two holds `n >= 2`
/// masks that sum to one at every pixel; index `n - 1` is the background
/// mask.
#[derive(Debug, Clone)]
pub struct AttentionMaskSet {
    data: Tensor,
    scheme: Scheme,
}

impl AttentionMaskSet {
    /// Wraps a mask tensor after checking its shape against the scheme.
    /// Use [`AttentionMaskSet::validate`] to check values.
    pub fn new(data: Tensor, scheme: Scheme) -> Result<Self> {
        let dims = data.dims();
        if dims.len() != 4 {
            return Err(invalid!(
                "attention masks must have shape (batch, n, height, width), got {dims:?}"
            ));
        }
        match scheme {
            Scheme::One if dims[1] != 1 => Err(invalid!(
                "scheme 1 uses exactly one attention mask, got {}",
                dims[1]
            )),
            Scheme::Two if dims[1] < 2 => Err(invalid!(
                "scheme 2 needs at least two attention masks, got {}",
                dims[1]
            )),
            _ => Ok(Self { data, scheme }),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn n_masks(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn detach(&self) -> Self {
        Self {
            data: self.data.detach(),
            scheme: self.scheme,
        }
    }

    /// The mask that routes the input image through unchanged, shape
    /// `(batch, 1, height, width)`: `1 - A` for scheme one, the last softmax
    /// channel for scheme two.
    pub fn background(&self) -> Result<Tensor> {
        match self.scheme {
            Scheme::One => Ok(self.data.affine(-1.0, 1.0)?),
            Scheme::Two => Ok(self.data.narrow(1, self.n_masks() - 1, 1)?),
        }
    }

    /// Total weight given to generated content at each pixel, shape
    /// `(batch, 1, height, width)`.
    pub fn foreground_total(&self) -> Result<Tensor> {
        match self.scheme {
            Scheme::One => Ok(self.data.clone()),
            Scheme::Two => Ok(self.background()?.affine(-1.0, 1.0)?),
        }
    }

    /// Checks that every value lies in `[0, 1]` and, for scheme two, that
    /// the masks sum to one at every pixel, both within [`MASK_TOLERANCE`].
    pub fn validate(&self) -> Result<()> {
        let values = to_f64_vec(&self.data)?;
        for &v in &values {
            if !v.is_finite() {
                return Err(invalid!("attention mask contains non-finite value {v}"));
            }
            if !(-MASK_TOLERANCE..=1.0 + MASK_TOLERANCE).contains(&v) {
                return Err(invalid!("attention mask value {v} outside [0, 1]"));
            }
        }
        if self.scheme == Scheme::Two {
            let sums = to_f64_vec(&self.data.to_dtype(DType::F64)?.sum(1)?)?;
            if let Some(s) = sums.iter().find(|s| (*s - 1.0).abs() > MASK_TOLERANCE) {
                return Err(invalid!(
                    "scheme 2 attention masks must sum to 1 per pixel, found sum {s}"
                ));
            }
        }
        Ok(())
    }

    /// Validated masks clamped into `[0, 1]`, ready for fusion.
    fn checked_clamped(&self) -> Result<Tensor> {
        self.validate()?;
        Ok(self.data.clamp(0.0, 1.0)?)
    }
}

/// Candidate content images, shape `(batch, n_content, 3, height, width)`,
/// values in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ContentMaskSet(Tensor);

impl ContentMaskSet {
    pub fn new(data: Tensor) -> Result<Self> {
        let dims = data.dims();
        if dims.len() != 5 || dims[2] != 3 || dims[1] == 0 {
            return Err(invalid!(
                "content masks must have shape (batch, n, 3, height, width), got {dims:?}"
            ));
        }
        Ok(Self(data))
    }

    /// Splits a `(batch, 3 * n, height, width)` head output into `n` RGB
    /// content images.
    pub fn from_channels(data: &Tensor) -> Result<Self> {
        let (b, c, h, w) = data.dims4()?;
        if c == 0 || c % 3 != 0 {
            return Err(invalid!("content head must emit a multiple of 3 channels, got {c}"));
        }
        Self::new(data.reshape((b, c / 3, 3, h, w))?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn n_content(&self) -> usize {
        self.0.dims()[1]
    }

    /// The `k`-th content image, shape `(batch, 3, height, width)`.
    pub fn image(&self, k: usize) -> Result<Tensor> {
        Ok(self.0.narrow(1, k, 1)?.squeeze(1)?)
    }
}

/// Everything one generator forward pass produces.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub image: ImageBatch,
    pub attention: AttentionMaskSet,
    pub content: ContentMaskSet,
}

impl GeneratorOutput {
    /// Re-runs the fusion of this output's own masks over `input`. The
    /// result is bit-identical to `self.image` when `input` is the tensor the
    /// generator was called on.
    pub fn recompose(&self, input: &ImageBatch) -> Result<ImageBatch> {
        fuse(input, &self.content, &self.attention)
    }
}

/// Normalizes `(batch, n, height, width)` logits across the mask axis.
///
/// The result is order preserving per pixel and invariant to adding a
/// constant to all logits of a pixel.
pub fn channel_softmax(logits: &Tensor) -> Result<AttentionMaskSet> {
    let dims = logits.dims();
    if dims.len() != 4 || dims[1] < 2 {
        return Err(invalid!(
            "channel softmax needs (batch, n >= 2, height, width) logits, got {dims:?}"
        ));
    }
    if !all_finite(logits)? {
        return Err(invalid!("channel softmax received non-finite logits"));
    }
    // The shift cancels analytically, so it carries no gradient.
    let max = logits.max_keepdim(1)?.detach();
    let exp = logits.broadcast_sub(&max)?.exp()?;
    let sum = exp.sum_keepdim(1)?;
    AttentionMaskSet::new(exp.broadcast_div(&sum)?, Scheme::Two)
}

/// Sigmoid activation for the single scheme-one mask. Written through
/// `tanh` so large logits do not overflow.
pub fn sigmoid_mask(logits: &Tensor) -> Result<AttentionMaskSet> {
    let mask = (logits.affine(0.5, 0.0)?.tanh()? + 1.0)?.affine(0.5, 0.0)?;
    AttentionMaskSet::new(mask, Scheme::One)
}

fn check_fusion_shapes(
    x: &ImageBatch,
    content: &ContentMaskSet,
    attention: &AttentionMaskSet,
) -> Result<()> {
    let (b, _, h, w) = x.dims();
    let a = attention.tensor().dims();
    let c = content.tensor().dims();
    if a[0] != b || a[2] != h || a[3] != w {
        return Err(invalid!(
            "attention shape {a:?} does not match image shape {:?}",
            x.tensor().dims()
        ));
    }
    if c[0] != b || c[3] != h || c[4] != w {
        return Err(invalid!(
            "content shape {c:?} does not match image shape {:?}",
            x.tensor().dims()
        ));
    }
    Ok(())
}

/// Scheme-one fusion: `C * A + x * (1 - A)`.
pub fn fuse_scheme1(
    x: &ImageBatch,
    content: &ContentMaskSet,
    attention: &AttentionMaskSet,
) -> Result<ImageBatch> {
    if attention.scheme() != Scheme::One || content.n_content() != 1 {
        return Err(invalid!(
            "scheme 1 fusion needs one attention mask and one content mask, got scheme {} with {} content masks",
            attention.scheme(),
            content.n_content()
        ));
    }
    check_fusion_shapes(x, content, attention)?;
    let a = attention.checked_clamped()?;
    let c = content.image(0)?;
    let inverse = a.affine(-1.0, 1.0)?;
    let out = (c.broadcast_mul(&a)? + x.tensor().broadcast_mul(&inverse)?)?;
    ImageBatch::new(out)
}

/// Scheme-two fusion: `sum_f C_f * A_f + x * A_b`, background mask last.
pub fn fuse_scheme2(
    x: &ImageBatch,
    content: &ContentMaskSet,
    attention: &AttentionMaskSet,
) -> Result<ImageBatch> {
    if attention.scheme() != Scheme::Two {
        return Err(invalid!("scheme 2 fusion received scheme 1 masks"));
    }
    let n = attention.n_masks();
    if content.n_content() + 1 != n {
        return Err(invalid!(
            "scheme 2 fusion needs n - 1 = {} content masks, got {}",
            n - 1,
            content.n_content()
        ));
    }
    check_fusion_shapes(x, content, attention)?;
    let a = attention.checked_clamped()?;
    let foreground = a.narrow(1, 0, n - 1)?.unsqueeze(2)?;
    let background = a.narrow(1, n - 1, 1)?;
    let generated = content.tensor().broadcast_mul(&foreground)?.sum(1)?;
    let out = (generated + x.tensor().broadcast_mul(&background)?)?;
    ImageBatch::new(out)
}

/// Reconstruction step of the scheme-one cycle: the second generator's masks
/// fused over an already translated image.
pub fn fuse_cycle_scheme1(
    translated: &ImageBatch,
    content: &ContentMaskSet,
    attention: &AttentionMaskSet,
) -> Result<ImageBatch> {
    fuse_scheme1(translated, content, attention)
}

/// Reconstruction step of the scheme-two cycle.
pub fn fuse_cycle_scheme2(
    translated: &ImageBatch,
    content: &ContentMaskSet,
    attention: &AttentionMaskSet,
) -> Result<ImageBatch> {
    fuse_scheme2(translated, content, attention)
}

/// Dispatches to the fusion matching the masks' scheme.
pub fn fuse(
    x: &ImageBatch,
    content: &ContentMaskSet,
    attention: &AttentionMaskSet,
) -> Result<ImageBatch> {
    match attention.scheme() {
        Scheme::One => fuse_scheme1(x, content, attention),
        Scheme::Two => fuse_scheme2(x, content, attention),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(values: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(values.to_vec(), shape, &Device::Cpu).unwrap()
    }

    fn full(value: f64, shape: &[usize]) -> Tensor {
        (Tensor::ones(shape, DType::F64, &Device::Cpu).unwrap() * value).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .flatten_all()
            .unwrap()
            .max(0)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    }

    fn random(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        t(&v, shape)
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let masks = channel_softmax(&full(0.7, &[2, 10, 3, 3])).unwrap();
        for v in to_f64_vec(masks.tensor()).unwrap() {
            assert!((v - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_of_zero_and_ln2() {
        let masks = channel_softmax(&t(&[0.0, 2f64.ln()], &[1, 2, 1, 1])).unwrap();
        let v = to_f64_vec(masks.tensor()).unwrap();
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let logits = random(3, &[1, 4, 2, 2], -3.0, 3.0);
        let a = channel_softmax(&logits).unwrap();
        let b = channel_softmax(&(&logits + 5.5).unwrap()).unwrap();
        assert!(max_abs_diff(a.tensor(), b.tensor()) < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite_and_single_channel() {
        let bad = t(&[0.0, f64::NAN], &[1, 2, 1, 1]);
        assert!(matches!(channel_softmax(&bad), Err(Error::InvalidInput(_))));
        let single = t(&[0.0], &[1, 1, 1, 1]);
        assert!(matches!(channel_softmax(&single), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn softmax_sums_to_one_over_many_trials() {
        for seed in 0..1000 {
            let logits = random(seed, &[1, 10, 1, 1], -20.0, 20.0)
                .to_dtype(DType::F32)
                .unwrap();
            let masks = channel_softmax(&logits).unwrap();
            let sum: f64 = to_f64_vec(masks.tensor()).unwrap().iter().sum();
            assert!((sum - 1.0).abs() < 1e-5, "seed {seed}: sum {sum}");
        }
    }

    fn scheme1_inputs(x: f64, c: f64, a: f64) -> (ImageBatch, ContentMaskSet, AttentionMaskSet) {
        let x = ImageBatch::new(full(x, &[1, 3, 2, 2])).unwrap();
        let c = ContentMaskSet::new(full(c, &[1, 1, 3, 2, 2])).unwrap();
        let a = AttentionMaskSet::new(full(a, &[1, 1, 2, 2]), Scheme::One).unwrap();
        (x, c, a)
    }

    #[test]
    fn scheme1_identity_cases() {
        let (x, c, a) = scheme1_inputs(0.3, -0.6, 1.0);
        let out = fuse_scheme1(&x, &c, &a).unwrap();
        assert_eq!(max_abs_diff(out.tensor(), &c.image(0).unwrap()), 0.0);

        let (x, c, a) = scheme1_inputs(0.3, -0.6, 0.0);
        let out = fuse_scheme1(&x, &c, &a).unwrap();
        assert_eq!(max_abs_diff(out.tensor(), x.tensor()), 0.0);
    }

    #[test]
    fn scheme1_single_pixel() {
        let (x, c, a) = scheme1_inputs(0.2, 0.8, 0.5);
        let out = fuse_cycle_scheme1(&x, &c, &a).unwrap();
        for v in to_f64_vec(out.tensor()).unwrap() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn scheme1_rejects_mismatched_shapes() {
        let (x, c, _) = scheme1_inputs(0.2, 0.8, 0.5);
        let a = AttentionMaskSet::new(full(0.5, &[1, 1, 3, 2]), Scheme::One).unwrap();
        assert!(matches!(fuse_scheme1(&x, &c, &a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn fusion_clamps_rounding_but_rejects_real_violations() {
        let (x, c, _) = scheme1_inputs(0.2, 0.8, 0.5);
        let slightly_over = AttentionMaskSet::new(full(1.0 + 5e-6, &[1, 1, 2, 2]), Scheme::One).unwrap();
        let out = fuse_scheme1(&x, &c, &slightly_over).unwrap();
        assert!(max_abs_diff(out.tensor(), &c.image(0).unwrap()) < 1e-12);

        let over = AttentionMaskSet::new(full(1.01, &[1, 1, 2, 2]), Scheme::One).unwrap();
        assert!(matches!(fuse_scheme1(&x, &c, &over), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn scheme2_three_masks_single_pixel() {
        let x = ImageBatch::new(full(0.4, &[1, 3, 1, 1])).unwrap();
        let mut content = vec![1.0; 3];
        content.extend([0.0; 3]);
        let c = ContentMaskSet::new(t(&content, &[1, 2, 3, 1, 1])).unwrap();
        let a = AttentionMaskSet::new(t(&[0.2, 0.3, 0.5], &[1, 3, 1, 1]), Scheme::Two).unwrap();
        let out = fuse_scheme2(&x, &c, &a).unwrap();
        for v in to_f64_vec(out.tensor()).unwrap() {
            assert!((v - 0.4).abs() < 1e-12);
        }
        let cycled = fuse_cycle_scheme2(&x, &c, &a).unwrap();
        assert_eq!(max_abs_diff(out.tensor(), cycled.tensor()), 0.0);
    }

    #[test]
    fn scheme2_identity_cases() {
        let x = ImageBatch::new(random(1, &[2, 3, 3, 3], -1.0, 1.0)).unwrap();
        let c = ContentMaskSet::new(random(2, &[2, 1, 3, 3, 3], -1.0, 1.0)).unwrap();

        let fg_only = Tensor::cat(&[full(1.0, &[2, 1, 3, 3]), full(0.0, &[2, 1, 3, 3])], 1).unwrap();
        let a = AttentionMaskSet::new(fg_only, Scheme::Two).unwrap();
        let out = fuse_scheme2(&x, &c, &a).unwrap();
        assert_eq!(max_abs_diff(out.tensor(), &c.image(0).unwrap()), 0.0);

        let bg_only = Tensor::cat(&[full(0.0, &[2, 1, 3, 3]), full(1.0, &[2, 1, 3, 3])], 1).unwrap();
        let a = AttentionMaskSet::new(bg_only, Scheme::Two).unwrap();
        let out = fuse_cycle_scheme2(&x, &c, &a).unwrap();
        assert_eq!(max_abs_diff(out.tensor(), x.tensor()), 0.0);
    }

    #[test]
    fn scheme2_rejects_wrong_content_count_and_unnormalized_masks() {
        let x = ImageBatch::new(full(0.0, &[1, 3, 2, 2])).unwrap();
        let a = channel_softmax(&random(4, &[1, 3, 2, 2], -1.0, 1.0)).unwrap();
        let c = ContentMaskSet::new(full(0.0, &[1, 1, 3, 2, 2])).unwrap();
        assert!(matches!(fuse_scheme2(&x, &c, &a), Err(Error::InvalidInput(_))));

        let c = ContentMaskSet::new(full(0.0, &[1, 2, 3, 2, 2])).unwrap();
        let unnormalized = AttentionMaskSet::new(full(0.5, &[1, 3, 2, 2]), Scheme::Two).unwrap();
        assert!(matches!(fuse_scheme2(&x, &c, &unnormalized), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn scheme2_output_is_convex_combination() {
        for seed in 0..20 {
            let x = random(seed, &[1, 3, 4, 4], -1.0, 1.0);
            let content = random(seed + 100, &[1, 4, 3, 4, 4], -1.0, 1.0);
            let a = channel_softmax(&random(seed + 200, &[1, 5, 4, 4], -4.0, 4.0)).unwrap();
            let out = fuse_scheme2(
                &ImageBatch::new(x.clone()).unwrap(),
                &ContentMaskSet::new(content.clone()).unwrap(),
                &a,
            )
            .unwrap();
            let stacked = Tensor::cat(&[x.unsqueeze(1).unwrap(), content], 1).unwrap();
            let lo = stacked.min(1).unwrap();
            let hi = stacked.max(1).unwrap();
            let below = (&lo - out.tensor()).unwrap().flatten_all().unwrap().max(0).unwrap();
            let above = (out.tensor() - &hi).unwrap().flatten_all().unwrap().max(0).unwrap();
            assert!(below.to_scalar::<f64>().unwrap() <= 1e-12);
            assert!(above.to_scalar::<f64>().unwrap() <= 1e-12);
        }
    }

    #[test]
    fn background_and_foreground_of_each_scheme() {
        let a = AttentionMaskSet::new(full(0.25, &[1, 1, 2, 2]), Scheme::One).unwrap();
        assert!(to_f64_vec(&a.background().unwrap()).unwrap().iter().all(|v| *v == 0.75));
        let a = AttentionMaskSet::new(t(&[0.2, 0.3, 0.5], &[1, 3, 1, 1]), Scheme::Two).unwrap();
        assert_eq!(to_f64_vec(&a.background().unwrap()).unwrap(), vec![0.5]);
        assert_eq!(to_f64_vec(&a.foreground_total().unwrap()).unwrap(), vec![0.5]);
    }

    #[test]
    fn scheme_parses_from_flags() {
        assert_eq!("1".parse::<Scheme>().unwrap(), Scheme::One);
        assert_eq!("2".parse::<Scheme>().unwrap(), Scheme::Two);
        assert!("3".parse::<Scheme>().is_err());
    }
}

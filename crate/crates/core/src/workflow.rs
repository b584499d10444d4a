//! Inference-side workflows over image folders: translation, mask export
//! and evaluation reports.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use serde_json::{json, Map, Value};

use crate::data::{
    batch_image_to_rgb, decode_mask, decode_rgb, domain_dir, images_to_batch, list_images, mask_dir, mask_to_tensor,
    reference_dir, resize, Domain, Split, UnpairedDataset,
};
use crate::error::{invalid, Error, Result};
use crate::masks::{GeneratorOutput, ImageBatch};
use crate::metrics::{
    attention_localization, background_psnr, kid, median, psnr, serializable_db, FeatureExtractor, HistogramExtractor,
    KID_SUBSETS, KID_SUBSET_SIZE, NORMALIZED_PEAK,
};
use crate::networks::Generator;
use crate::tensor::to_f64_vec;
use crate::training::{Direction, TrainState};

const DTYPE: candle_core::DType = candle_core::DType::F32;

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads an image and resizes it to the generator's resolution.
fn load_input(path: &Path, size: usize) -> Result<(RgbImage, ImageBatch)> {
    let img = resize(&decode_rgb(path)?, size as u32);
    let batch = images_to_batch(std::slice::from_ref(&img), DTYPE, &Device::Cpu)?;
    Ok((img, batch))
}

/// Runs `generator` on one image.
pub fn translate_image(generator: &Generator, path: &Path) -> Result<(ImageBatch, GeneratorOutput)> {
    let (_, x) = load_input(path, generator.config().image_size)?;
    let out = generator.forward(&x)?;
    Ok((x, out))
}

/// Writes `{stem}_fake.png` into `output` for every image in `input`.
/// Returns the written paths; an empty input folder yields none.
pub fn translate_dir(state: &TrainState, direction: Direction, input: &Path, output: &Path) -> Result<Vec<PathBuf>> {
    let generator = state.generator(direction);
    let inputs = list_images(input)?;
    create_dir(output)?;
    let mut written = Vec::with_capacity(inputs.len());
    for path in inputs {
        let (_, out) = translate_image(generator, &path)?;
        let target = output.join(format!("{}_fake.png", stem(&path)));
        let img = batch_image_to_rgb(&out.image, 0)?;
        img.save(&target).map_err(|e| Error::image(&target, e))?;
        written.push(target);
    }
    Ok(written)
}

/// Mean per-image cycle error `|F(G(x)) - x|` over domain A and
/// `|G(F(y)) - y|` over domain B, on unaugmented images at the generator
/// resolution. Each image counts once.
pub fn mean_cycle_l1(state: &TrainState, data: &UnpairedDataset) -> Result<f64> {
    let size = state.gen_g.config().image_size as u32;
    let mut total = 0.0;
    let mut count = 0usize;
    for (samples, first, second) in [(&data.a, &state.gen_g, &state.gen_f), (&data.b, &state.gen_f, &state.gen_g)] {
        for s in samples {
            let img = resize(&s.image, size);
            let x = images_to_batch(std::slice::from_ref(&img), DTYPE, &Device::Cpu)?;
            let rec = second.forward_cycle(&first.forward(&x)?.image)?;
            let err = (rec.image.tensor() - x.tensor())?.abs()?.mean_all()?;
            total += err.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid!("no images to measure the cycle error on"));
    }
    Ok(total / count as f64)
}

/// Quantizes one pixel's masks to 8 bits. A set that sums to 1 maps to
/// levels summing to exactly 255: each value is floored and the remaining
/// levels go to the largest remainders, lowest index first on ties.
pub fn quantize_pixel(values: &[f64]) -> Vec<u8> {
    let scaled: Vec<f64> = values.iter().map(|v| v.clamp(0.0, 1.0) * 255.0).collect();
    let mut levels: Vec<u8> = scaled.iter().map(|v| v.floor() as u8).collect();
    let total: f64 = scaled.iter().sum();
    let floor_sum: u32 = levels.iter().map(|&l| l as u32).sum();
    let target = total.round().min(255.0) as u32;
    let mut deficit = target.saturating_sub(floor_sum) as usize;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| (scaled[j] - scaled[j].floor()).total_cmp(&(scaled[i] - scaled[i].floor())).then(i.cmp(&j)));
    for &i in &order {
        if deficit == 0 {
            break;
        }
        if levels[i] < 255 {
            levels[i] += 1;
            deficit -= 1;
        }
    }
    levels
}

/// 8-bit images of each attention mask of the first batch item, background
/// last for scheme two.
pub fn quantize_attention(out: &GeneratorOutput) -> Result<Vec<GrayImage>> {
    let t = out.attention.tensor().get(0)?;
    let (n, h, w) = t.dims3()?;
    let values = to_f64_vec(&t)?;
    let plane = h * w;
    let mut images = vec![GrayImage::new(w as u32, h as u32); n];
    let mut pixel = vec![0.0; n];
    for p in 0..plane {
        for (k, v) in pixel.iter_mut().enumerate() {
            *v = values[k * plane + p];
        }
        for (k, level) in quantize_pixel(&pixel).into_iter().enumerate() {
            images[k].put_pixel((p % w) as u32, (p / w) as u32, image::Luma([level]));
        }
    }
    Ok(images)
}

/// Files written for one input by [`export_masks_dir`].
#[derive(Debug, Clone, Default)]
pub struct ExportedMasks {
    pub attention: Vec<PathBuf>,
    pub content: Vec<PathBuf>,
}

/// Writes `{stem}_attn{k}.png` (grayscale) and `{stem}_content{k}.png` for
/// every image in `input`.
pub fn export_masks_dir(state: &TrainState, direction: Direction, input: &Path, output: &Path) -> Result<Vec<ExportedMasks>> {
    let generator = state.generator(direction);
    let inputs = list_images(input)?;
    create_dir(output)?;
    let mut all = Vec::with_capacity(inputs.len());
    for path in inputs {
        let (_, out) = translate_image(generator, &path)?;
        let s = stem(&path);
        let mut files = ExportedMasks::default();
        for (k, img) in quantize_attention(&out)?.into_iter().enumerate() {
            let target = output.join(format!("{s}_attn{k}.png"));
            img.save(&target).map_err(|e| Error::image(&target, e))?;
            files.attention.push(target);
        }
        for k in 0..out.content.n_content() {
            let content = ImageBatch::new(out.content.image(k)?)?;
            let target = output.join(format!("{s}_content{k}.png"));
            batch_image_to_rgb(&content, 0)?
                .save(&target)
                .map_err(|e| Error::image(&target, e))?;
            files.content.push(target);
        }
        all.push(files);
    }
    Ok(all)
}

/// Metrics of one translation direction over a test split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub direction: Direction,
    pub num_images: usize,
    /// Mean PSNR against reference translations, when references exist.
    pub psnr_db: Option<f64>,
    pub kid: Option<(f64, f64)>,
    pub background_psnr_db: Option<Vec<f64>>,
    pub attention_localization: Option<Vec<f64>>,
    pub notes: Vec<String>,
    pub config_echo: String,
}

impl EvaluationReport {
    pub fn median_background_psnr(&self) -> Option<f64> {
        self.background_psnr_db.as_deref().and_then(median)
    }

    pub fn median_localization(&self) -> Option<f64> {
        self.attention_localization.as_deref().and_then(median)
    }

    /// JSON object mapping metric names to values. Infinite PSNR values are
    /// written as the sentinel `1e9`.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("direction".into(), json!(self.direction.to_string()));
        m.insert("num_images".into(), json!(self.num_images));
        if let Some(p) = self.psnr_db {
            m.insert("psnr_db".into(), json!(serializable_db(p)));
        }
        if let Some((mean, std)) = self.kid {
            m.insert("kid_mean".into(), json!(mean));
            m.insert("kid_std".into(), json!(std));
        }
        if let Some(v) = self.median_background_psnr() {
            m.insert("background_psnr_db_median".into(), json!(serializable_db(v)));
        }
        if let Some(v) = self.median_localization() {
            m.insert("attention_localization_median".into(), json!(v));
        }
        m.insert("psnr_peak".into(), json!(NORMALIZED_PEAK));
        m.insert("notes".into(), json!(self.notes));
        let config: Map<String, Value> = self
            .config_echo
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect();
        m.insert("config".into(), Value::Object(config));
        Value::Object(m)
    }
}

fn resize_mask(mask: GrayImage, size: usize) -> GrayImage {
    if mask.dimensions() == (size as u32, size as u32) {
        mask
    } else {
        imageops::resize(&mask, size as u32, size as u32, FilterType::Nearest)
    }
}

/// Evaluates one direction on `root`'s test split: the source domain's
/// `test` folder is translated; `ref{target}/` provides PSNR references,
/// `test{target}/` the real images for KID, and `masks{source}/` the
/// ground truth for the localization metrics. Missing parts are skipped
/// and noted in the report.
pub fn evaluate(state: &TrainState, direction: Direction, root: &Path, seed: u64) -> Result<EvaluationReport> {
    let (source, target) = match direction {
        Direction::AtoB => (Domain::A, Domain::B),
        Direction::BtoA => (Domain::B, Domain::A),
    };
    let generator = state.generator(direction);
    let size = generator.config().image_size;
    let inputs = list_images(&domain_dir(root, Split::Test, source))?;
    let mut notes = Vec::new();

    let mut fakes = Vec::with_capacity(inputs.len());
    let mut psnrs = Vec::new();
    let mut missing_refs = 0;
    let mut bg = Vec::new();
    let mut loc = Vec::new();
    let mut missing_masks = 0;
    for path in &inputs {
        let (x, out) = translate_image(generator, path)?;
        let name = format!("{}.png", stem(path));
        let reference = reference_dir(root, target).join(&name);
        if reference.is_file() {
            let (_, r) = load_input(&reference, size)?;
            psnrs.push(psnr(&out.image, &r, NORMALIZED_PEAK)?);
        } else {
            missing_refs += 1;
        }
        let mask_path = mask_dir(root, source).join(&name);
        if mask_path.is_file() {
            let gt: Tensor = mask_to_tensor(&resize_mask(decode_mask(&mask_path)?, size), DTYPE, &Device::Cpu)?;
            bg.push(background_psnr(&x, &out.image, &gt, NORMALIZED_PEAK)?);
            loc.push(attention_localization(&out.attention, &gt)?);
        } else {
            missing_masks += 1;
        }
        fakes.push(batch_image_to_rgb(&out.image, 0)?);
    }

    let psnr_db = if inputs.is_empty() || missing_refs > 0 {
        notes.push(format!("psnr omitted: {missing_refs} of {} inputs lack a reference translation", inputs.len()));
        None
    } else {
        // Mean over images of per-image dB; infinite values dominate.
        Some(psnrs.iter().sum::<f64>() / psnrs.len() as f64)
    };
    let (background_psnr_db, attention_localization) = if inputs.is_empty() || missing_masks > 0 {
        notes.push(format!(
            "localization metrics omitted: {missing_masks} of {} inputs lack a ground-truth mask",
            inputs.len()
        ));
        (None, None)
    } else {
        (Some(bg), Some(loc))
    };

    let real_dir = domain_dir(root, Split::Test, target);
    let reals: Vec<RgbImage> = if real_dir.is_dir() {
        list_images(&real_dir)?
            .iter()
            .map(|p| decode_rgb(p).map(|img| resize(&img, size as u32)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let subset = KID_SUBSET_SIZE.min(fakes.len()).min(reals.len());
    let kid_value = if subset >= 2 {
        let extractor = HistogramExtractor::default();
        if subset < KID_SUBSET_SIZE {
            notes.push(format!("kid subset size reduced to {subset}"));
        }
        Some(kid(&extractor.extract(&fakes)?, &extractor.extract(&reals)?, subset, KID_SUBSETS, seed)?)
    } else {
        notes.push("kid omitted: fewer than 2 translated or real images".to_string());
        None
    };

    Ok(EvaluationReport {
        direction,
        num_images: inputs.len(),
        psnr_db,
        kid: kid_value,
        background_psnr_db,
        attention_localization,
        notes,
        config_echo: state.config.echo(),
    })
}

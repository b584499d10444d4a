use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::error::{invalid, Error, Result};
use crate::masks::ImageBatch;

/// Maps an 8-bit value onto `[-1, 1]`: `2 v / 255 - 1`.
pub fn normalize(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Inverse of [`normalize`], rounding to the nearest level and clamping out
/// of range values.
pub fn denormalize(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Decodes an 8-bit image as RGB. Grayscale is replicated to three channels
/// and alpha is dropped; 16-bit and float images are rejected.
pub fn decode_rgb(path: &Path) -> Result<RgbImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::image(path, e))?;
    match img {
        DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgba8(_) => Ok(img.to_rgb8()),
        other => Err(invalid!(
            "{}: only 8-bit images are supported, got {:?}",
            path.display(),
            other.color()
        )),
    }
}

/// Decodes a single-channel 8-bit mask.
pub fn decode_mask(path: &Path) -> Result<GrayImage> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e))?;
    match img {
        DynamicImage::ImageLuma8(gray) => Ok(gray),
        other => Err(invalid!(
            "{}: masks must be 8-bit grayscale, got {:?}",
            path.display(),
            other.color()
        )),
    }
}

/// Channels-first normalized values of one image.
pub fn rgb_to_chw(img: &RgbImage) -> Vec<f32> {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut out = vec![0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = normalize(px[c]);
        }
    }
    out
}

/// Stacks equally sized images into an [`ImageBatch`].
pub fn images_to_batch(images: &[RgbImage], dtype: DType, device: &Device) -> Result<ImageBatch> {
    let Some(first) = images.first() else {
        return Err(invalid!("cannot build an empty image batch"));
    };
    let (w, h) = first.dimensions();
    let mut data = Vec::with_capacity(images.len() * 3 * (w * h) as usize);
    for img in images {
        if img.dimensions() != (w, h) {
            return Err(invalid!("batch images differ in size"));
        }
        data.extend(rgb_to_chw(img));
    }
    let t = Tensor::from_vec(data, (images.len(), 3, h as usize, w as usize), device)?.to_dtype(dtype)?;
    ImageBatch::from_normalized(t)
}

/// Image `index` of a batch back to 8-bit RGB.
pub fn batch_image_to_rgb(batch: &ImageBatch, index: usize) -> Result<RgbImage> {
    let (_, _, h, w) = batch.dims();
    let values: Vec<f32> = batch
        .tensor()
        .get(index)?
        .to_dtype(DType::F32)?
        .flatten_all()?
        .to_vec1()?;
    let plane = h * w;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([
            denormalize(values[i]),
            denormalize(values[plane + i]),
            denormalize(values[2 * plane + i]),
        ])
    }))
}

/// Binary `(1, 1, H, W)` tensor (0 or 1) from a 0/255 mask image.
pub fn mask_to_tensor(mask: &GrayImage, dtype: DType, device: &Device) -> Result<Tensor> {
    let (w, h) = mask.dimensions();
    let data: Vec<f32> = mask.pixels().map(|p| if p[0] >= 128 { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(data, (1, 1, h as usize, w as usize), device)?.to_dtype(dtype)?)
}

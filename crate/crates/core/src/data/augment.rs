use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;

/// Margin added before random cropping: 30 pixels at a 256 crop, scaled
/// proportionally at other sizes.
pub fn load_size(crop_size: usize) -> usize {
    crop_size + (30.0 * crop_size as f64 / 256.0).round() as usize
}

/// One draw of the augmentation randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentParams {
    pub load_size: usize,
    pub crop_size: usize,
    pub offset_x: usize,
    pub offset_y: usize,
    pub flip: bool,
}

impl AugmentParams {
    /// Uniform crop offset inside the resized frame, flip with probability 0.5.
    pub fn sample<R: Rng + ?Sized>(crop_size: usize, rng: &mut R) -> Self {
        let load = load_size(crop_size);
        let span = load - crop_size;
        Self {
            load_size: load,
            crop_size,
            offset_x: rng.random_range(0..=span),
            offset_y: rng.random_range(0..=span),
            flip: rng.random_bool(0.5),
        }
    }

    pub fn apply(&self, image: &RgbImage) -> RgbImage {
        let load = self.load_size as u32;
        let resized = resize(image, load);
        let crop = self.crop_size as u32;
        let cropped = imageops::crop_imm(&resized, self.offset_x as u32, self.offset_y as u32, crop, crop).to_image();
        if self.flip {
            hflip(&cropped)
        } else {
            cropped
        }
    }
}

/// Resizes to a `size x size` square (bilinear); a no-op when already that size.
pub fn resize(image: &RgbImage, size: u32) -> RgbImage {
    if image.dimensions() == (size, size) {
        image.clone()
    } else {
        imageops::resize(image, size, size, FilterType::Triangle)
    }
}

pub fn hflip(image: &RgbImage) -> RgbImage {
    imageops::flip_horizontal(image)
}

/// Resize to the load size, random crop, random left-right flip.
pub fn augment<R: Rng + ?Sized>(image: &RgbImage, crop_size: usize, rng: &mut R) -> RgbImage {
    AugmentParams::sample(crop_size, rng).apply(image)
}

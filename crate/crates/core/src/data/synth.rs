//! Synthetic two-domain dataset with ground-truth foreground masks.
//!
//! Every image is a smooth two-color gradient background with one disc in
//! front of it. Domain A paints the disc a solid brown; domain B paints it
//! with vertical stripes alternating between that brown and a darkened
//! copy, starting at the disc's left edge. The two renderings of a scene
//! thus determine each other. Backgrounds come from a stream shared by both
//! domains, so their statistics match exactly; only the foreground differs.
//! Test images also get a reference rendering of the same scene in the
//! other domain.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{domain_dir, mask_dir, Domain, Split};
use crate::error::{config_err, Error, Result};

/// Radius range as a fraction of the canvas side. Keeps the disc area
/// between roughly 6% and 34% of the canvas.
const RADIUS_RANGE: (f64, f64) = (0.14, 0.33);
/// Brightness factor of the dark stripes.
const STRIPE_DARKENING: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub canvas_size: usize,
    pub train_a: usize,
    pub train_b: usize,
    pub test_a: usize,
    pub test_b: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            canvas_size: 64,
            train_a: 16,
            train_b: 16,
            test_a: 0,
            test_b: 0,
            seed: 0,
        }
    }
}

/// Geometry and colors of one synthetic image, independent of domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub size: usize,
    pub bg_from: [f64; 3],
    pub bg_to: [f64; 3],
    pub bg_angle: f64,
    pub center: (f64, f64),
    pub radius: f64,
    pub solid: [f64; 3],
}

fn split_code(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Test => 1,
    }
}

fn domain_code(domain: Domain) -> u64 {
    match domain {
        Domain::A => 1,
        Domain::B => 2,
    }
}

impl Scene {
    /// Scene `index` of a split and domain. The background depends only on
    /// `(seed, split, index)`, so domain A and B backgrounds share a stream.
    pub fn sample(size: usize, seed: u64, split: Split, domain: Domain, index: usize) -> Self {
        let mut bg = ChaCha8Rng::seed_from_u64(seed);
        bg.set_stream(split_code(split) << 32 | index as u64);
        let mut fg = ChaCha8Rng::seed_from_u64(seed);
        fg.set_stream(domain_code(domain) << 40 | split_code(split) << 32 | index as u64);

        let bg_color = |rng: &mut ChaCha8Rng| {
            [
                rng.random_range(30.0..110.0),
                rng.random_range(100.0..200.0),
                rng.random_range(60.0..180.0),
            ]
        };
        let bg_from = bg_color(&mut bg);
        let bg_to = bg_color(&mut bg);
        let bg_angle = bg.random_range(0.0..std::f64::consts::TAU);

        let s = size as f64;
        let radius = fg.random_range(RADIUS_RANGE.0..RADIUS_RANGE.1) * s;
        let lo = radius + 1.0;
        let hi = s - radius - 1.0;
        let center = (fg.random_range(lo..hi), fg.random_range(lo..hi));
        let solid = [
            fg.random_range(150.0..200.0),
            fg.random_range(80.0..120.0),
            fg.random_range(30.0..70.0),
        ];
        Self {
            size,
            bg_from,
            bg_to,
            bg_angle,
            center,
            radius,
            solid,
        }
    }

    pub fn in_disc(&self, x: u32, y: u32) -> bool {
        let dx = x as f64 + 0.5 - self.center.0;
        let dy = y as f64 + 0.5 - self.center.1;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    fn background(&self, x: u32, y: u32) -> [u8; 3] {
        let s = self.size as f64;
        let (sin, cos) = self.bg_angle.sin_cos();
        // Projection onto the gradient direction, mapped into [0, 1].
        let u = ((x as f64 + 0.5 - s / 2.0) * cos + (y as f64 + 0.5 - s / 2.0) * sin) / (s * std::f64::consts::SQRT_2) + 0.5;
        let mut px = [0u8; 3];
        for c in 0..3 {
            px[c] = (self.bg_from[c] + (self.bg_to[c] - self.bg_from[c]) * u).round().clamp(0.0, 255.0) as u8;
        }
        px
    }

    /// Index of the vertical stripe containing column `x`; stripes are
    /// `size / 16` pixels wide and start at the disc's left edge.
    pub fn stripe_band(&self, x: u32) -> i64 {
        let width = self.size as f64 / 16.0;
        ((x as f64 + 0.5 - (self.center.0 - self.radius)) / width).floor() as i64
    }

    fn foreground(&self, x: u32, domain: Domain) -> [u8; 3] {
        match domain {
            Domain::A => self.solid.map(|v| v.round() as u8),
            Domain::B => {
                if self.stripe_band(x) % 2 == 0 {
                    self.solid.map(|v| v.round() as u8)
                } else {
                    self.solid.map(|v| (v * STRIPE_DARKENING).round() as u8)
                }
            }
        }
    }

    pub fn render(&self, domain: Domain) -> RgbImage {
        let s = self.size as u32;
        RgbImage::from_fn(s, s, |x, y| {
            if self.in_disc(x, y) {
                Rgb(self.foreground(x, domain))
            } else {
                Rgb(self.background(x, y))
            }
        })
    }

    /// Foreground mask with values exactly 0 and 255.
    pub fn mask(&self) -> GrayImage {
        let s = self.size as u32;
        GrayImage::from_fn(s, s, |x, y| Luma([if self.in_disc(x, y) { 255 } else { 0 }]))
    }
}

/// Counts of what [`synth_generate`] wrote.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthSummary {
    pub images: usize,
    pub masks: usize,
    pub references: usize,
}

/// `root/ref{A,B}`: renderings of test scenes in the opposite domain,
/// `refB/x.png` being the translation target of `testA/x.png`.
pub fn reference_dir(root: &Path, target: Domain) -> PathBuf {
    root.join(format!("ref{target}"))
}

fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::image(path, e))
}

fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::image(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the dataset under `root`: `{train,test}{A,B}/`, `masks{A,B}/` and,
/// for test images, `ref{A,B}/`. Deterministic in `spec.seed`.
pub fn synth_generate(spec: &SynthSpec, root: &Path) -> Result<SynthSummary> {
    if spec.canvas_size < 16 {
        return Err(config_err!("synthetic canvas must be at least 16 pixels, got {}", spec.canvas_size));
    }
    let mut summary = SynthSummary::default();
    let jobs = [
        (Split::Train, Domain::A, spec.train_a),
        (Split::Train, Domain::B, spec.train_b),
        (Split::Test, Domain::A, spec.test_a),
        (Split::Test, Domain::B, spec.test_b),
    ];
    for (split, domain, count) in jobs {
        if count == 0 {
            continue;
        }
        let images = domain_dir(root, split, domain);
        let masks = mask_dir(root, domain);
        create_dir(&images)?;
        create_dir(&masks)?;
        let refs = reference_dir(root, domain.other());
        if split == Split::Test {
            create_dir(&refs)?;
        }
        for i in 0..count {
            let scene = Scene::sample(spec.canvas_size, spec.seed, split, domain, i);
            let name = format!("{split}_{i:05}.png");
            save_rgb(&scene.render(domain), &images.join(&name))?;
            save_gray(&scene.mask(), &masks.join(&name))?;
            summary.images += 1;
            summary.masks += 1;
            if split == Split::Test {
                save_rgb(&scene.render(domain.other()), &refs.join(&name))?;
                summary.references += 1;
            }
        }
    }
    Ok(summary)
}

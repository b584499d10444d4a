use std::fmt;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image_io::decode_rgb;
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn other(self) -> Self {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::A => "A",
            Domain::B => "B",
        })
    }
}

/// `root/{train,test}{A,B}`.
pub fn domain_dir(root: &Path, split: Split, domain: Domain) -> PathBuf {
    root.join(format!("{split}{domain}"))
}

/// `root/masks{A,B}`: ground-truth foreground masks, named like the images.
pub fn mask_dir(root: &Path, domain: Domain) -> PathBuf {
    root.join(format!("masks{domain}"))
}

/// A decoded image and where it came from.
#[derive(Debug, Clone)]
pub struct Sample {
    pub path: PathBuf,
    pub stem: String,
    pub image: RgbImage,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Sorted image files (`.png`, `.jpg`, `.jpeg`) of a directory.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Decodes every image in a directory, sorted by file name.
pub fn load_folder(dir: &Path) -> Result<Vec<Sample>> {
    list_images(dir)?
        .into_iter()
        .map(|path| {
            let image = decode_rgb(&path)?;
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(Sample { path, stem, image })
        })
        .collect()
}

/// Two independent image collections. Pairings are drawn from a seeded
/// stream so that the same seed always yields the same sequence.
#[derive(Debug, Clone)]
pub struct UnpairedDataset {
    pub root: PathBuf,
    pub split: Split,
    pub a: Vec<Sample>,
    pub b: Vec<Sample>,
    seed: u64,
}

/// Loads `root/{split}A` and `root/{split}B`.
pub fn load_unpaired(root: &Path, split: Split, seed: u64) -> Result<UnpairedDataset> {
    let mut domains = Vec::with_capacity(2);
    for domain in [Domain::A, Domain::B] {
        let dir = domain_dir(root, split, domain);
        if !dir.is_dir() {
            return Err(config_err!("dataset folder {} does not exist", dir.display()));
        }
        let samples = load_folder(&dir)?;
        if samples.is_empty() {
            return Err(config_err!("dataset folder {} contains no images", dir.display()));
        }
        domains.push(samples);
    }
    let b = domains.pop().unwrap_or_default();
    let a = domains.pop().unwrap_or_default();
    Ok(UnpairedDataset {
        root: root.to_path_buf(),
        split,
        a,
        b,
        seed,
    })
}

impl UnpairedDataset {
    /// Size of the larger domain; the smaller one wraps around.
    pub fn epoch_len(&self) -> usize {
        self.a.len().max(self.b.len())
    }

    /// `(index into a, index into b)` for every position of one epoch. Each
    /// domain is shuffled independently.
    pub fn epoch_pairs(&self, epoch: u64) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order_a: Vec<usize> = (0..self.a.len()).collect();
        let mut order_b: Vec<usize> = (0..self.b.len()).collect();
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);
        (0..self.epoch_len())
            .map(|i| (order_a[i % order_a.len()], order_b[i % order_b.len()]))
            .collect()
    }

    /// Pair at a global position of the endless epoch sequence.
    pub fn pair_at(&self, position: u64) -> (usize, usize) {
        let len = self.epoch_len() as u64;
        self.epoch_pairs(position / len)[(position % len) as usize]
    }

    /// Pairs for `count` consecutive positions starting at `start`.
    pub fn pairs_from(&self, start: u64, count: usize) -> Vec<(usize, usize)> {
        let len = self.epoch_len() as u64;
        let mut out = Vec::with_capacity(count);
        let mut cached: Option<(u64, Vec<(usize, usize)>)> = None;
        for pos in start..start + count as u64 {
            let epoch = pos / len;
            if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
                cached = Some((epoch, self.epoch_pairs(epoch)));
            }
            let (_, pairs) = cached.as_ref().expect("filled above");
            out.push(pairs[(pos % len) as usize]);
        }
        out
    }
}

#![allow(dead_code)]

use std::path::Path;

use attni2i::data::{synth_generate, SynthSpec};
use attni2i::masks::Scheme;
use attni2i::training::TrainingConfig;

/// Writes a small synthetic dataset under `root`.
pub fn synth(root: &Path, train: usize, test: usize, seed: u64) {
    let spec = SynthSpec {
        canvas_size: 64,
        train_a: train,
        train_b: train,
        test_a: test,
        test_b: test,
        seed,
    };
    synth_generate(&spec, root).unwrap();
}

/// Desk-scale config: 64 pixels, 1/8 channel width.
pub fn small_config(scheme: Scheme, data: &Path, run: &Path, steps: u64) -> TrainingConfig {
    let mut cfg = TrainingConfig::for_scheme(scheme);
    cfg.n_masks = 4;
    cfg.image_size = 64;
    cfg.crop_size = 64;
    cfg.width_multiplier = 0.125;
    cfg.total_steps = steps;
    cfg.seed = 7;
    cfg.data_root = data.to_path_buf();
    cfg.run_dir = run.to_path_buf();
    cfg
}

/// FNV-1a over the bit patterns of every value, in order.
pub fn hash_f32(values: impl IntoIterator<Item = f32>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

pub fn hash_params(params: &[attni2i::networks::Param]) -> u64 {
    hash_f32(params.iter().flat_map(|p| {
        p.var
            .as_tensor()
            .flatten_all()
            .unwrap()
            .to_dtype(candle_core::DType::F32)
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()
    }))
}

//! Trains on a freshly generated synthetic dataset and prints the loss curve.
//!
//! ```text
//! cargo run --release --example smoke_train -- <steps> <scheme> <width> <n> <train_per_domain> <lr>
//! ```

use attni2i::data::{load_unpaired, synth_generate, Split, SynthSpec};
use attni2i::masks::Scheme;
use attni2i::training::{load_checkpoint, train, TrainingConfig};
use attni2i::workflow::mean_cycle_l1;

fn main() -> attni2i::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let steps: u64 = arg(0, "500").parse().expect("steps");
    let scheme: Scheme = arg(1, "2").parse()?;
    let width: f64 = arg(2, "0.125").parse().expect("width");
    let n: usize = arg(3, "10").parse().expect("n");
    let count: usize = arg(4, "16").parse().expect("count");
    let lr: f64 = arg(5, "0.0002").parse().expect("lr");

    let dir = std::env::temp_dir().join(format!("attni2i-smoke-{}", std::process::id()));
    let data = dir.join("data");
    synth_generate(
        &SynthSpec {
            canvas_size: 64,
            train_a: count,
            train_b: count,
            test_a: 0,
            test_b: 0,
            seed: 7,
        },
        &data,
    )?;
    let mut cfg = TrainingConfig::for_scheme(scheme);
    cfg.image_size = 64;
    cfg.crop_size = 64;
    cfg.n_masks = n;
    cfg.width_multiplier = width;
    cfg.total_steps = steps;
    cfg.lr = lr;
    cfg.seed = 7;
    cfg.data_root = data.clone();
    cfg.run_dir = dir.join("run");
    let start = std::time::Instant::now();
    let outcome = train(&cfg)?;
    for (i, r) in outcome.reports.iter().enumerate() {
        if (i + 1) % 10 == 0 || i < 10 {
            println!("{:5} total {:.4} cycle {:.4} g_adv {:.4} d_adv {:.4}", i + 1, r.total, r.cycle, r.g_adv, r.d_adv);
        }
    }
    println!("{:.3} s/step", start.elapsed().as_secs_f64() / steps.max(1) as f64);
    let state = load_checkpoint(&outcome.final_checkpoint)?;
    let set = load_unpaired(&data, Split::Train, 0)?;
    println!("mean cycle L1 {:.4}", mean_cycle_l1(&state, &set)?);
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

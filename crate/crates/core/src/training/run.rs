use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::Device;
use image::RgbImage;

use super::checkpoint::save_checkpoint;
use super::config::{lr_at, TrainingConfig};
use super::state::{TrainState, DTYPE};
use crate::data::{augment, images_to_batch, load_unpaired, Split, UnpairedDataset};
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::masks::ImageBatch;

pub const LOG_FILE: &str = "loss.tsv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Column order of the loss log.
pub const LOG_COLUMNS: [&str; 10] = ["step", "g_adv", "d_adv", "agan", "cycle", "identity", "pixel", "tv", "total", "lr"];

/// One tab-separated log record; absent terms are written as `-`.
pub fn log_line(step: u64, report: &LossReport, lr: f64) -> String {
    let mut fields = vec![step.to_string()];
    for (_, value) in report.named_values() {
        fields.push(value.map_or_else(|| "-".to_string(), |v| v.to_string()));
    }
    fields.push(lr.to_string());
    fields.join("\t")
}

/// Path of the checkpoint written after `step` steps.
pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("step_{step:08}.ckpt"))
}

/// The `(x, y)` batch for the state's current step: pairs come from the
/// dataset's seeded epoch order, augmentation from the state rng.
pub fn next_batch(state: &mut TrainState, data: &UnpairedDataset) -> Result<(ImageBatch, ImageBatch)> {
    let bs = state.config.batch_size;
    let crop = state.config.crop_size;
    let pairs = data.pairs_from(state.step * bs as u64, bs);
    let mut xs: Vec<RgbImage> = Vec::with_capacity(bs);
    let mut ys: Vec<RgbImage> = Vec::with_capacity(bs);
    for (ia, ib) in pairs {
        xs.push(augment(&data.a[ia].image, crop, &mut state.rng));
        ys.push(augment(&data.b[ib].image, crop, &mut state.rng));
    }
    Ok((images_to_batch(&xs, DTYPE, &Device::Cpu)?, images_to_batch(&ys, DTYPE, &Device::Cpu)?))
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub log_path: Option<PathBuf>,
    pub reports: Vec<LossReport>,
}

/// Trains from scratch on `cfg.data_root`, writing into `cfg.run_dir`.
pub fn train(cfg: &TrainingConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_unpaired(&cfg.data_root, Split::Train, cfg.seed)?;
    let state = TrainState::new(cfg.clone())?;
    train_state(state, &data, &cfg.run_dir)
}

/// Runs `state` up to its configured `total_steps`, appending to the loss
/// log when resuming. Writes the config echo, one log record per step and
/// checkpoints at every interval plus the final step. With nothing left to
/// do, writes only the checkpoint of the current state.
pub fn train_state(mut state: TrainState, data: &UnpairedDataset, run_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let config_path = run_dir.join(CONFIG_FILE);
    std::fs::write(&config_path, state.config.echo()).map_err(|e| Error::io(&config_path, e))?;

    let total = state.config.total_steps;
    let interval = state.config.checkpoint_interval;
    let mut reports = Vec::new();
    let mut log_path = None;
    if state.step < total {
        let path = run_dir.join(LOG_FILE);
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(state.step > 0)
            .write(true)
            .truncate(state.step == 0)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut log = BufWriter::new(file);
        while state.step < total {
            let lr = lr_at(state.step, &state.config);
            let (x, y) = next_batch(&mut state, data)?;
            let report = state.train_step(&x, &y)?;
            writeln!(log, "{}", log_line(state.step, &report, lr)).map_err(|e| Error::io(&path, e))?;
            log::debug!("step {} total {:.5}", state.step, report.total);
            reports.push(report);
            if interval > 0 && state.step % interval == 0 && state.step < total {
                log.flush().map_err(|e| Error::io(&path, e))?;
                save_checkpoint(&state, &checkpoint_path(run_dir, state.step))?;
            }
        }
        log.flush().map_err(|e| Error::io(&path, e))?;
        log_path = Some(path);
    }
    let final_checkpoint = checkpoint_path(run_dir, state.step);
    save_checkpoint(&state, &final_checkpoint)?;
    Ok(TrainOutcome {
        final_checkpoint,
        log_path,
        reports,
    })
}

/// Opens a log for reading back, e.g. in tests.
pub fn read_log(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect())
}


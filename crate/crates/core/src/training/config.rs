use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{config_err, Error, Result};
use crate::losses::LossWeights;
use crate::masks::Scheme;
use crate::networks::{GeneratorConfig, DEFAULT_N_MASKS};

/// Everything a training run depends on. Serializes to flat `key=value`
/// lines ([`TrainingConfig::echo`]) which parse back to an equal value.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub scheme: Scheme,
    pub n_masks: usize,
    /// Side length the networks are built for and evaluated at.
    pub image_size: usize,
    /// Side length of the random training crop.
    pub crop_size: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 saves only the final one.
    pub checkpoint_interval: u64,
    pub buffer_capacity: usize,
    /// Channel-width multiplier of every network; 1.0 is the full model.
    pub width_multiplier: f64,
    pub deterministic: bool,
    pub data_root: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Two,
            n_masks: DEFAULT_N_MASKS,
            image_size: 256,
            crop_size: 256,
            batch_size: 1,
            total_steps: 10_000,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            weights: LossWeights::defaults(Scheme::Two),
            seed: 0,
            checkpoint_interval: 0,
            buffer_capacity: 50,
            width_multiplier: 1.0,
            deterministic: false,
            data_root: PathBuf::new(),
            run_dir: PathBuf::from("runs"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| config_err!("invalid value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => Err(config_err!("invalid value {value:?} for {key}, expected true or false")),
    }
}

impl TrainingConfig {
    /// Defaults for a scheme, with loss weights to match.
    pub fn for_scheme(scheme: Scheme) -> Self {
        Self {
            scheme,
            weights: LossWeights::defaults(scheme),
            ..Self::default()
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig::new(self.scheme, self.n_masks, self.image_size, self.width_multiplier)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator_config().validate()?;
        self.weights.validate()?;
        if self.weights.scheme != self.scheme {
            return Err(config_err!("loss weights are for scheme {}, config is scheme {}", self.weights.scheme, self.scheme));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(config_err!("lr must be positive, got {}", self.lr));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(config_err!("{name} must lie in [0, 1), got {beta}"));
            }
        }
        if self.crop_size > self.image_size {
            return Err(config_err!(
                "crop size {} exceeds image size {}",
                self.crop_size,
                self.image_size
            ));
        }
        if self.crop_size < 32 || self.crop_size % 8 != 0 {
            return Err(config_err!("crop size must be a multiple of 8 and at least 32, got {}", self.crop_size));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be at least 1"));
        }
        Ok(())
    }

    /// Sets one field from its `key=value` spelling. Short aliases match
    /// the command-line flags (`n`, `size`, `crop`, `steps`, `data`, `out`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "scheme" => {
                self.scheme = parse(key, value)?;
                self.weights.scheme = self.scheme;
            }
            "n" | "n_masks" => self.n_masks = parse(key, value)?,
            "size" | "image_size" => self.image_size = parse(key, value)?,
            "crop" | "crop_size" => self.crop_size = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "steps" | "total_steps" => self.total_steps = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "lambda_cycle" => self.weights.lambda_cycle = parse(key, value)?,
            "lambda_id" => self.weights.lambda_id = parse(key, value)?,
            "lambda_gan" => self.weights.lambda_gan = parse(key, value)?,
            "lambda_pixel" => self.weights.lambda_pixel = parse(key, value)?,
            "lambda_tv" => self.weights.lambda_tv = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "width" | "width_multiplier" => self.width_multiplier = parse(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "data" | "data_root" => self.data_root = PathBuf::from(value.trim()),
            "out" | "run_dir" => self.run_dir = PathBuf::from(value.trim()),
            _ => return Err(config_err!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err!("line {}: expected key=value, got {line:?}", i + 1))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Parses an echo produced by [`TrainingConfig::echo`].
    pub fn from_echo(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Canonical `key=value` listing of every field.
    pub fn echo(&self) -> String {
        let w = &self.weights;
        let fields: [(&str, String); 21] = [
            ("scheme", self.scheme.to_string()),
            ("n_masks", self.n_masks.to_string()),
            ("image_size", self.image_size.to_string()),
            ("crop_size", self.crop_size.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("lambda_cycle", w.lambda_cycle.to_string()),
            ("lambda_id", w.lambda_id.to_string()),
            ("lambda_gan", w.lambda_gan.to_string()),
            ("lambda_pixel", w.lambda_pixel.to_string()),
            ("lambda_tv", w.lambda_tv.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("width_multiplier", self.width_multiplier.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("data_root", self.data_root.display().to_string()),
            ("run_dir", self.run_dir.display().to_string()),
        ];
        let mut out = String::new();
        for (k, v) in fields {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Learning rate for `step`: `lr` for the first half of training, then a
/// linear decay reaching 0 at `total_steps`.
pub fn lr_at(step: u64, cfg: &TrainingConfig) -> f64 {
    let total = cfg.total_steps as f64;
    let half = total / 2.0;
    let s = step as f64;
    if s < half {
        cfg.lr
    } else if s >= total {
        0.0
    } else {
        cfg.lr * (total - s) / (total - half)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: u64) -> TrainingConfig {
        TrainingConfig {
            total_steps: total,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let c = cfg(1000);
        assert_eq!(lr_at(0, &c), 2e-4);
        assert_eq!(lr_at(499, &c), 2e-4);
        assert_eq!(lr_at(1000, &c), 0.0);
        assert!((lr_at(750, &c) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_monotone_and_bounded() {
        let c = cfg(37);
        let lrs: Vec<f64> = (0..=40).map(|s| lr_at(s, &c)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&v| (0.0..=2e-4).contains(&v)));
    }

    #[test]
    fn echo_round_trips() {
        let mut c = TrainingConfig::for_scheme(Scheme::One);
        c.lr = 1.0 / 3.0 * 1e-4;
        c.weights.lambda_tv = 1e-6;
        c.data_root = PathBuf::from("/tmp/some data");
        c.deterministic = true;
        assert_eq!(TrainingConfig::from_echo(&c.echo()).unwrap(), c);
    }

    #[test]
    fn aliases_and_comments() {
        let mut c = TrainingConfig::default();
        c.apply_text("# comment\n\nsize=64\ncrop = 64\nsteps=5\nn=4\n").unwrap();
        assert_eq!((c.image_size, c.crop_size, c.total_steps, c.n_masks), (64, 64, 5, 4));
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = TrainingConfig::default();
        assert!(matches!(c.set("nonsense", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("lr", "fast"), Err(Error::Config(_))));
        assert!(c.apply_text("no equals sign").is_err());
        c.crop_size = 512;
        assert!(c.validate().is_err());
        let c = TrainingConfig {
            lr: 0.0,
            ..TrainingConfig::default()
        };
        assert!(c.validate().is_err());
    }
}

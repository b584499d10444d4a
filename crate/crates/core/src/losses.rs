//! Training objectives.
//!
//! Adversarial terms use least-squares targets (real 1, fake 0, generator
//! target 1). L1 terms average over batch and pixels; the total-variation
//! term sums over pixels and averages over the batch, which is why its
//! default weight is tiny.

use candle_core::Tensor;

use crate::error::{config_err, invalid, Result};
use crate::masks::{AttentionMaskSet, ImageBatch, Scheme};
use crate::networks::concat_pair;

/// Relative weights of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_cycle: f64,
    pub lambda_id: f64,
    pub lambda_gan: f64,
    pub lambda_pixel: f64,
    pub lambda_tv: f64,
    pub scheme: Scheme,
}

impl LossWeights {
    /// Scheme one: cycle 10, adversarial 0.5, pixel 1, TV 1e-6.
    /// Scheme two: cycle 10, identity 0.5.
    pub fn defaults(scheme: Scheme) -> Self {
        Self {
            lambda_cycle: 10.0,
            lambda_id: 0.5,
            lambda_gan: 0.5,
            lambda_pixel: 1.0,
            lambda_tv: 1e-6,
            scheme,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_cycle", self.lambda_cycle),
            ("lambda_id", self.lambda_id),
            ("lambda_gan", self.lambda_gan),
            ("lambda_pixel", self.lambda_pixel),
            ("lambda_tv", self.lambda_tv),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    /// The terms the active scheme optimizes, each with its coefficient.
    pub fn coefficients(&self) -> Vec<(Term, f64)> {
        match self.scheme {
            Scheme::Two => vec![
                (Term::GAdv, 1.0),
                (Term::Cycle, self.lambda_cycle),
                (Term::Identity, self.lambda_id),
            ],
            Scheme::One => vec![
                (Term::Cycle, self.lambda_cycle),
                (Term::Pixel, self.lambda_pixel),
                (Term::GAdv, self.lambda_gan),
                (Term::Agan, self.lambda_gan),
                (Term::Tv, self.lambda_tv),
            ],
        }
    }
}

/// Generator-side loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    GAdv,
    Agan,
    Cycle,
    Identity,
    Pixel,
    Tv,
}

/// Scalar values of one training step. Terms the scheme does not use are
/// `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    /// Generator adversarial loss, both directions.
    pub g_adv: f64,
    /// Discriminator loss summed over every discriminator trained.
    pub d_adv: f64,
    /// Generator side of the attention-guided adversarial loss (scheme one).
    pub agan: Option<f64>,
    pub cycle: f64,
    /// Scheme two only.
    pub identity: Option<f64>,
    /// Scheme one only.
    pub pixel: Option<f64>,
    /// Scheme one only.
    pub tv: Option<f64>,
    /// Weighted generator objective.
    pub total: f64,
}

impl LossReport {
    pub fn term(&self, term: Term) -> Option<f64> {
        match term {
            Term::GAdv => Some(self.g_adv),
            Term::Agan => self.agan,
            Term::Cycle => Some(self.cycle),
            Term::Identity => self.identity,
            Term::Pixel => self.pixel,
            Term::Tv => self.tv,
        }
    }

    /// Every reported value with its name, in log-column order.
    pub fn named_values(&self) -> [(&'static str, Option<f64>); 8] {
        [
            ("g_adv", Some(self.g_adv)),
            ("d_adv", Some(self.d_adv)),
            ("agan", self.agan),
            ("cycle", Some(self.cycle)),
            ("identity", self.identity),
            ("pixel", self.pixel),
            ("tv", self.tv),
            ("total", Some(self.total)),
        ]
    }

    /// Name of the first NaN or infinite entry, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.named_values()
            .into_iter()
            .find(|(_, v)| v.is_some_and(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}

fn mean_l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(invalid!("L1 operands differ in shape: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// `0.5 mean((real - 1)^2) + 0.5 mean(fake^2)`.
pub fn lsgan_d_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    let real = (real_logits - 1.0)?.sqr()?.mean_all()?;
    let fake = fake_logits.sqr()?.mean_all()?;
    Ok(((real + fake)? * 0.5)?)
}

/// `mean((fake - 1)^2)`.
pub fn lsgan_g_loss(fake_logits: &Tensor) -> Result<Tensor> {
    Ok((fake_logits - 1.0)?.sqr()?.mean_all()?)
}

/// `mean|x_rec - x| + mean|y_rec - y|`.
pub fn cycle_loss(x: &Tensor, x_rec: &Tensor, y: &Tensor, y_rec: &Tensor) -> Result<Tensor> {
    Ok((mean_l1(x_rec, x)? + mean_l1(y_rec, y)?)?)
}

/// `mean|G(y) - y| + mean|F(x) - x|`.
pub fn identity_loss(g_of_y: &Tensor, y: &Tensor, f_of_x: &Tensor, x: &Tensor) -> Result<Tensor> {
    Ok((mean_l1(g_of_y, y)? + mean_l1(f_of_x, x)?)?)
}

/// `mean|G(x) - x| + mean|F(y) - y|`.
pub fn pixel_loss(g_of_x: &Tensor, x: &Tensor, f_of_y: &Tensor, y: &Tensor) -> Result<Tensor> {
    Ok((mean_l1(g_of_x, x)? + mean_l1(f_of_y, y)?)?)
}

/// Anisotropic total variation of a scheme-one mask: absolute forward
/// differences along both axes, summed over the image (no wrap-around) and
/// averaged over the batch.
pub fn tv_loss(mask: &AttentionMaskSet) -> Result<Tensor> {
    if mask.scheme() != Scheme::One {
        return Err(invalid!("total-variation loss applies to scheme 1 masks only"));
    }
    let a = mask.tensor();
    let (b, _, h, w) = a.dims4()?;
    let mut total = Tensor::zeros((), a.dtype(), a.device())?;
    if w > 1 {
        let dx = (a.narrow(3, 1, w - 1)? - a.narrow(3, 0, w - 1)?)?;
        total = (total + dx.abs()?.sum_all()?)?;
    }
    if h > 1 {
        let dy = (a.narrow(2, 1, h - 1)? - a.narrow(2, 0, h - 1)?)?;
        total = (total + dy.abs()?.sum_all()?)?;
    }
    Ok((total / b as f64)?)
}

/// Generator side of the attention-guided adversarial loss: the critic
/// should score `[mask, fake]` as real.
pub fn agan_g_term<D>(critic: D, mask: &AttentionMaskSet, fake: &ImageBatch) -> Result<Tensor>
where
    D: Fn(&Tensor) -> Result<Tensor>,
{
    lsgan_g_loss(&critic(&concat_pair(mask, fake)?)?)
}

/// Critic side of the attention-guided adversarial loss over the pairs
/// `[mask, real]` and `[mask, fake]`, both carrying the same mask.
pub fn agan_d_term<D>(critic: D, mask: &AttentionMaskSet, real: &ImageBatch, fake: &ImageBatch) -> Result<Tensor>
where
    D: Fn(&Tensor) -> Result<Tensor>,
{
    let real_logits = critic(&concat_pair(mask, real)?)?;
    let fake_logits = critic(&concat_pair(mask, fake)?)?;
    lsgan_d_loss(&real_logits, &fake_logits)
}

/// Both sides of the attention-guided adversarial loss: `(g_term, d_term)`.
pub fn agan_losses<D>(critic: D, mask: &AttentionMaskSet, real: &ImageBatch, fake: &ImageBatch) -> Result<(Tensor, Tensor)>
where
    D: Fn(&Tensor) -> Result<Tensor>,
{
    let g = agan_g_term(&critic, mask, fake)?;
    let d = agan_d_term(&critic, mask, real, fake)?;
    Ok((g, d))
}

/// `g_adv + lambda_cycle * cycle + lambda_id * identity`.
pub fn total_objective_scheme2(parts: &LossReport, w: &LossWeights) -> f64 {
    parts.g_adv + w.lambda_cycle * parts.cycle + w.lambda_id * parts.identity.unwrap_or(0.0)
}

/// `lambda_cycle * cycle + lambda_pixel * pixel + lambda_gan * (g_adv + agan) + lambda_tv * tv`.
pub fn total_objective_scheme1(parts: &LossReport, w: &LossWeights) -> f64 {
    w.lambda_cycle * parts.cycle
        + w.lambda_pixel * parts.pixel.unwrap_or(0.0)
        + w.lambda_gan * (parts.g_adv + parts.agan.unwrap_or(0.0))
        + w.lambda_tv * parts.tv.unwrap_or(0.0)
}

pub fn total_objective(parts: &LossReport, w: &LossWeights) -> f64 {
    match w.scheme {
        Scheme::One => total_objective_scheme1(parts, w),
        Scheme::Two => total_objective_scheme2(parts, w),
    }
}

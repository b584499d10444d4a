use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::buffer::ImageBuffer;
use super::config::{lr_at, TrainingConfig};
use crate::error::{Error, Result};
use crate::losses::{
    agan_d_term, agan_g_term, cycle_loss, identity_loss, lsgan_d_loss, lsgan_g_loss, pixel_loss, total_objective,
    tv_loss, LossReport, Term,
};
use crate::masks::{AttentionMaskSet, ImageBatch, Scheme};
use crate::networks::{
    build_discriminator, build_generator, Discriminator, DiscriminatorConfig, Generator, Param, Parameterized,
};
use crate::tensor::scalar;

/// Translation direction: `AtoB` runs G, `BtoA` runs F.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AtoB,
    BtoA,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A2B" | "ATOB" => Ok(Direction::AtoB),
            "B2A" | "BTOA" => Ok(Direction::BtoA),
            _ => Err(Error::Config(format!("unknown direction {s:?}, expected A2B or B2A"))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::AtoB => "A2B",
            Direction::BtoA => "B2A",
        })
    }
}

/// Seed of the `k`-th independently initialized component of a run.
pub(crate) fn component_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub(crate) const SEED_GEN_G: u64 = 1;
pub(crate) const SEED_GEN_F: u64 = 2;
pub(crate) const SEED_DISC_X: u64 = 3;
pub(crate) const SEED_DISC_Y: u64 = 4;
pub(crate) const SEED_DISC_XA: u64 = 5;
pub(crate) const SEED_DISC_YA: u64 = 6;
const SEED_BUFFER_X: u64 = 7;
const SEED_BUFFER_Y: u64 = 8;
const SEED_DATA: u64 = 9;

/// Everything that changes during training. Domain X is dataset domain A,
/// domain Y is B; `gen_g` maps X to Y and `gen_f` maps Y to X.
pub struct TrainState {
    pub config: TrainingConfig,
    pub gen_g: Generator,
    pub gen_f: Generator,
    pub disc_x: Discriminator,
    pub disc_y: Discriminator,
    /// Attention-guided discriminators, scheme one only.
    pub disc_xa: Option<Discriminator>,
    pub disc_ya: Option<Discriminator>,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub buffer_x: ImageBuffer,
    pub buffer_y: ImageBuffer,
    pub step: u64,
    /// Drives data augmentation.
    pub rng: ChaCha8Rng,
}

/// Detached products of a generator phase, consumed by the discriminator phase.
#[derive(Debug, Clone)]
pub struct GeneratorPhase {
    pub report: LossReport,
    /// `F(y)`.
    pub fake_x: ImageBatch,
    /// `G(x)`.
    pub fake_y: ImageBatch,
    /// Attention of `F` on `y` (scheme one pairs it with domain X images).
    pub mask_x: AttentionMaskSet,
    /// Attention of `G` on `x`.
    pub mask_y: AttentionMaskSet,
}

pub(crate) const DTYPE: DType = DType::F32;

fn ensure_finite(report: &LossReport, step: u64) -> Result<()> {
    match report.first_non_finite() {
        Some(term) => Err(Error::NonFinite {
            context: format!("loss term {term} at step {step}"),
        }),
        None => Ok(()),
    }
}

impl TrainState {
    /// Freshly initialized state; every component is seeded from `config.seed`.
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let seed = config.seed;
        let gcfg = config.generator_config();
        let gen_g = build_generator(&gcfg, component_seed(seed, SEED_GEN_G), DTYPE, &device)?;
        let gen_f = build_generator(&gcfg, component_seed(seed, SEED_GEN_F), DTYPE, &device)?;
        let dcfg = DiscriminatorConfig::new(3, config.image_size, config.width_multiplier);
        let disc_x = build_discriminator(&dcfg, component_seed(seed, SEED_DISC_X), DTYPE, &device)?;
        let disc_y = build_discriminator(&dcfg, component_seed(seed, SEED_DISC_Y), DTYPE, &device)?;
        let (disc_xa, disc_ya) = match config.scheme {
            Scheme::One => {
                let acfg = DiscriminatorConfig::new(4, config.image_size, config.width_multiplier);
                (
                    Some(build_discriminator(&acfg, component_seed(seed, SEED_DISC_XA), DTYPE, &device)?),
                    Some(build_discriminator(&acfg, component_seed(seed, SEED_DISC_YA), DTYPE, &device)?),
                )
            }
            Scheme::Two => (None, None),
        };
        let mut state = Self {
            opt_g: Adam::new(&[], config.beta1, config.beta2)?,
            opt_d: Adam::new(&[], config.beta1, config.beta2)?,
            buffer_x: ImageBuffer::new(config.buffer_capacity, component_seed(seed, SEED_BUFFER_X)),
            buffer_y: ImageBuffer::new(config.buffer_capacity, component_seed(seed, SEED_BUFFER_Y)),
            rng: ChaCha8Rng::seed_from_u64(component_seed(seed, SEED_DATA)),
            step: 0,
            config,
            gen_g,
            gen_f,
            disc_x,
            disc_y,
            disc_xa,
            disc_ya,
        };
        state.opt_g = Adam::new(&state.generator_params(), state.config.beta1, state.config.beta2)?;
        state.opt_d = Adam::new(&state.discriminator_params(), state.config.beta1, state.config.beta2)?;
        Ok(state)
    }

    /// Networks in checkpoint order, each with its name.
    pub fn networks(&self) -> Vec<(&'static str, &[Param])> {
        let mut nets: Vec<(&'static str, &[Param])> = vec![
            ("gen_g", self.gen_g.parameters()),
            ("gen_f", self.gen_f.parameters()),
            ("disc_x", self.disc_x.parameters()),
            ("disc_y", self.disc_y.parameters()),
        ];
        if let (Some(xa), Some(ya)) = (&self.disc_xa, &self.disc_ya) {
            nets.push(("disc_xa", xa.parameters()));
            nets.push(("disc_ya", ya.parameters()));
        }
        nets
    }

    /// Parameters of both generators, G first.
    pub fn generator_params(&self) -> Vec<Param> {
        self.gen_g.parameters().iter().chain(self.gen_f.parameters()).cloned().collect()
    }

    /// Parameters of every discriminator, in [`TrainState::networks`] order.
    pub fn discriminator_params(&self) -> Vec<Param> {
        self.networks()
            .into_iter()
            .filter(|(name, _)| name.starts_with("disc"))
            .flat_map(|(_, params)| params.iter().cloned())
            .collect()
    }

    pub fn generator(&self, direction: Direction) -> &Generator {
        match direction {
            Direction::AtoB => &self.gen_g,
            Direction::BtoA => &self.gen_f,
        }
    }

    /// Forward passes of both generators, the scheme's generator objective,
    /// and one Adam step on G and F. Discriminators are read, not updated.
    pub fn generator_phase(&mut self, x: &ImageBatch, y: &ImageBatch) -> Result<GeneratorPhase> {
        let w = self.config.weights;
        let gx = self.gen_g.forward(x)?;
        let fy = self.gen_f.forward(y)?;
        let x_rec = self.gen_f.forward_cycle(&gx.image)?;
        let y_rec = self.gen_g.forward_cycle(&fy.image)?;

        let g_adv = (lsgan_g_loss(&self.disc_y.forward(gx.image.tensor())?)?
            + lsgan_g_loss(&self.disc_x.forward(fy.image.tensor())?)?)?;
        let cycle = cycle_loss(x.tensor(), x_rec.image.tensor(), y.tensor(), y_rec.image.tensor())?;

        let mut terms: Vec<(Term, Tensor)> = vec![(Term::GAdv, g_adv), (Term::Cycle, cycle)];
        match self.config.scheme {
            Scheme::Two => {
                let g_of_y = self.gen_g.forward(y)?;
                let f_of_x = self.gen_f.forward(x)?;
                terms.push((
                    Term::Identity,
                    identity_loss(g_of_y.image.tensor(), y.tensor(), f_of_x.image.tensor(), x.tensor())?,
                ));
            }
            Scheme::One => {
                let (xa, ya) = self.attention_discriminators()?;
                let agan = (agan_g_term(|t| ya.forward(t), &gx.attention, &gx.image)?
                    + agan_g_term(|t| xa.forward(t), &fy.attention, &fy.image)?)?;
                terms.push((Term::Agan, agan));
                terms.push((
                    Term::Pixel,
                    pixel_loss(gx.image.tensor(), x.tensor(), fy.image.tensor(), y.tensor())?,
                ));
                terms.push((Term::Tv, (tv_loss(&gx.attention)? + tv_loss(&fy.attention)?)?));
            }
        }

        let mut report = LossReport::default();
        for (term, t) in &terms {
            let v = scalar(t)?;
            match term {
                Term::GAdv => report.g_adv = v,
                Term::Agan => report.agan = Some(v),
                Term::Cycle => report.cycle = v,
                Term::Identity => report.identity = Some(v),
                Term::Pixel => report.pixel = Some(v),
                Term::Tv => report.tv = Some(v),
            }
        }
        report.total = total_objective(&report, &w);
        ensure_finite(&report, self.step)?;

        let mut objective: Option<Tensor> = None;
        for (term, coef) in w.coefficients() {
            if let Some((_, t)) = terms.iter().find(|(k, _)| *k == term) {
                let scaled = (t * coef)?;
                objective = Some(match objective {
                    Some(acc) => (acc + scaled)?,
                    None => scaled,
                });
            }
        }
        let objective = objective.expect("every scheme optimizes at least one term");
        let grads = objective.backward()?;
        let params = self.generator_params();
        let lr = lr_at(self.step, &self.config);
        self.opt_g.step(&params, &grads, lr)?;

        Ok(GeneratorPhase {
            report,
            fake_x: fy.image.detach(),
            fake_y: gx.image.detach(),
            mask_x: fy.attention.detach(),
            mask_y: gx.attention.detach(),
        })
    }

    fn attention_discriminators(&self) -> Result<(&Discriminator, &Discriminator)> {
        match (&self.disc_xa, &self.disc_ya) {
            (Some(xa), Some(ya)) => Ok((xa, ya)),
            _ => Err(Error::Config("scheme 1 state lacks attention-guided discriminators".into())),
        }
    }

    /// Discriminator losses on real images against buffered fakes (plus the
    /// attention-pair losses in scheme one) and one Adam step on every
    /// discriminator. Returns the summed discriminator loss.
    pub fn discriminator_phase(&mut self, x: &ImageBatch, y: &ImageBatch, phase: &GeneratorPhase) -> Result<f64> {
        let fake_x = self.buffer_x.query(&phase.fake_x)?;
        let fake_y = self.buffer_y.query(&phase.fake_y)?;
        let mut loss = (lsgan_d_loss(&self.disc_x.forward(x.tensor())?, &self.disc_x.forward(fake_x.tensor())?)?
            + lsgan_d_loss(&self.disc_y.forward(y.tensor())?, &self.disc_y.forward(fake_y.tensor())?)?)?;
        if self.config.scheme == Scheme::One {
            let (xa, ya) = self.attention_discriminators()?;
            let pair_y = agan_d_term(|t| ya.forward(t), &phase.mask_y, y, &phase.fake_y)?;
            let pair_x = agan_d_term(|t| xa.forward(t), &phase.mask_x, x, &phase.fake_x)?;
            loss = ((loss + pair_y)? + pair_x)?;
        }
        let d_adv = scalar(&loss)?;
        if !d_adv.is_finite() {
            return Err(Error::NonFinite {
                context: format!("loss term d_adv at step {}", self.step),
            });
        }
        let grads = loss.backward()?;
        let params = self.discriminator_params();
        let lr = lr_at(self.step, &self.config);
        self.opt_d.step(&params, &grads, lr)?;
        Ok(d_adv)
    }

    /// One generator step then one discriminator step; increments `step`.
    pub fn train_step(&mut self, x: &ImageBatch, y: &ImageBatch) -> Result<LossReport> {
        let phase = self.generator_phase(x, y)?;
        let d_adv = self.discriminator_phase(x, y, &phase)?;
        self.step += 1;
        Ok(LossReport { d_adv, ..phase.report })
    }
}

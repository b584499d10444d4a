use candle_core::{DType, Device, Tensor};

use super::layers::{
    instance_norm, ConvTranspose2d, Conv2d, Padding, ParamBuilder, ParamSet, Parameterized, Param,
};
use crate::error::{config_err, Error, Result};
use crate::masks::{
    channel_softmax, fuse_cycle_scheme1, fuse_cycle_scheme2, fuse_scheme1, fuse_scheme2,
    sigmoid_mask, ContentMaskSet, GeneratorOutput, ImageBatch, Scheme,
};
use crate::tensor::all_finite;

/// Resolutions the residual backbone is configured for.
pub const SUPPORTED_SIZES: [usize; 3] = [64, 128, 256];

/// Default number of attention masks for scheme two (background included).
pub const DEFAULT_N_MASKS: usize = 10;

/// Shape hyper-parameters of a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub scheme: Scheme,
    /// Number of attention masks for scheme two; ignored for scheme one.
    pub n_masks: usize,
    pub image_size: usize,
    /// Multiplies the base width of 64 feature maps.
    pub width_multiplier: f64,
}

impl GeneratorConfig {
    pub fn new(scheme: Scheme, n_masks: usize, image_size: usize, width_multiplier: f64) -> Self {
        Self {
            scheme,
            n_masks,
            image_size,
            width_multiplier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_SIZES.contains(&self.image_size) {
            return Err(config_err!(
                "unsupported image size {}, expected one of {SUPPORTED_SIZES:?}",
                self.image_size
            ));
        }
        if self.scheme == Scheme::Two && self.n_masks < 2 {
            return Err(config_err!("scheme 2 needs n >= 2 masks, got {}", self.n_masks));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(config_err!("width multiplier must be positive, got {}", self.width_multiplier));
        }
        Ok(())
    }

    /// Feature maps after the first convolution.
    pub fn base_width(&self) -> usize {
        scaled_width(self.width_multiplier)
    }

    /// Nine residual blocks at 256 pixels, six below.
    pub fn residual_blocks(&self) -> usize {
        if self.image_size >= 256 {
            9
        } else {
            6
        }
    }

    /// Channels of the attention head: 1 for scheme one, `n` for scheme two.
    pub fn attention_channels(&self) -> usize {
        match self.scheme {
            Scheme::One => 1,
            Scheme::Two => self.n_masks,
        }
    }

    /// Channels of the content head: 3 for scheme one, `3 (n - 1)` for scheme two.
    pub fn content_channels(&self) -> usize {
        match self.scheme {
            Scheme::One => 3,
            Scheme::Two => 3 * (self.n_masks - 1),
        }
    }
}

pub(crate) fn scaled_width(multiplier: f64) -> usize {
    ((64.0 * multiplier).round() as usize).max(1)
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResidualBlock {
    fn new(pb: &mut ParamBuilder, name: &str, channels: usize) -> Result<Self> {
        pb.push(name);
        let conv1 = Conv2d::new(pb, "conv1", channels, channels, 3, 1, Padding::Reflect(1))?;
        let conv2 = Conv2d::new(pb, "conv2", channels, channels, 3, 1, Padding::Reflect(1))?;
        pb.pop();
        Ok(Self { conv1, conv2 })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = instance_norm(&self.conv1.forward(x)?)?.relu()?;
        let h = instance_norm(&self.conv2.forward(&h)?)?;
        Ok((x + h)?)
    }
}

/// Downsampling stem plus residual trunk.
#[derive(Debug, Clone)]
struct Encoder {
    stem: Conv2d,
    down1: Conv2d,
    down2: Conv2d,
    blocks: Vec<ResidualBlock>,
}

impl Encoder {
    fn new(pb: &mut ParamBuilder, width: usize, n_blocks: usize) -> Result<Self> {
        pb.push("encoder");
        let stem = Conv2d::new(pb, "stem", 3, width, 7, 1, Padding::Reflect(3))?;
        let down1 = Conv2d::new(pb, "down1", width, 2 * width, 3, 2, Padding::Zero(1))?;
        let down2 = Conv2d::new(pb, "down2", 2 * width, 4 * width, 3, 2, Padding::Zero(1))?;
        let blocks = (0..n_blocks)
            .map(|i| ResidualBlock::new(pb, &format!("res{i}"), 4 * width))
            .collect::<Result<Vec<_>>>()?;
        pb.pop();
        Ok(Self {
            stem,
            down1,
            down2,
            blocks,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = instance_norm(&self.stem.forward(x)?)?.relu()?;
        let h = instance_norm(&self.down1.forward(&h)?)?.relu()?;
        let mut h = instance_norm(&self.down2.forward(&h)?)?.relu()?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h)
    }
}

/// Two upsampling stages followed by an output convolution.
#[derive(Debug, Clone)]
struct Decoder {
    up1: ConvTranspose2d,
    up2: ConvTranspose2d,
    head: Conv2d,
}

impl Decoder {
    fn new(pb: &mut ParamBuilder, name: &str, width: usize, out: usize, head_kernel: usize) -> Result<Self> {
        pb.push(name);
        let up1 = ConvTranspose2d::new(pb, "up1", 4 * width, 2 * width)?;
        let up2 = ConvTranspose2d::new(pb, "up2", 2 * width, width)?;
        let head = Conv2d::new(pb, "head", width, out, head_kernel, 1, Padding::Reflect(head_kernel / 2))?;
        pb.pop();
        Ok(Self { up1, up2, head })
    }

    /// Raw head output, before any activation.
    fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let h = instance_norm(&self.up1.forward(features)?)?.relu()?;
        let h = instance_norm(&self.up2.forward(&h)?)?.relu()?;
        self.head.forward(&h)
    }
}

/// Scheme-one generator: one network emits a sigmoid attention mask and a
/// tanh content image from a single 4-channel head.
#[derive(Debug, Clone)]
pub struct GeneratorS1 {
    config: GeneratorConfig,
    encoder: Encoder,
    decoder: Decoder,
    params: ParamSet,
}

/// Scheme-two generator: a shared encoder feeding an attention decoder
/// (`n` softmax channels) and a content decoder (`n - 1` tanh RGB images).
#[derive(Debug, Clone)]
pub struct GeneratorS2 {
    config: GeneratorConfig,
    encoder: Encoder,
    attention: Decoder,
    content: Decoder,
    params: ParamSet,
}

#[derive(Debug, Clone)]
pub enum Generator {
    One(GeneratorS1),
    Two(GeneratorS2),
}

/// Builds and initializes a generator. Identical seeds give bit-identical
/// parameters.
pub fn build_generator(config: &GeneratorConfig, seed: u64, dtype: DType, device: &Device) -> Result<Generator> {
    config.validate()?;
    let width = config.base_width();
    let mut pb = ParamBuilder::new(seed, dtype, device);
    let encoder = Encoder::new(&mut pb, width, config.residual_blocks())?;
    match config.scheme {
        Scheme::One => {
            let decoder = Decoder::new(&mut pb, "decoder", width, 1 + 3, 7)?;
            Ok(Generator::One(GeneratorS1 {
                config: config.clone(),
                encoder,
                decoder,
                params: pb.finish(),
            }))
        }
        Scheme::Two => {
            let attention = Decoder::new(&mut pb, "attention", width, config.attention_channels(), 1)?;
            let content = Decoder::new(&mut pb, "content", width, config.content_channels(), 7)?;
            Ok(Generator::Two(GeneratorS2 {
                config: config.clone(),
                encoder,
                attention,
                content,
                params: pb.finish(),
            }))
        }
    }
}

fn ensure_finite(t: &Tensor, stage: &str) -> Result<()> {
    if all_finite(t)? {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("generator {stage}"),
        })
    }
}

impl Generator {
    pub fn config(&self) -> &GeneratorConfig {
        match self {
            Generator::One(g) => &g.config,
            Generator::Two(g) => &g.config,
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.config().scheme
    }

    /// Translates `x`, returning the fused image with the masks that made it.
    pub fn forward(&self, x: &ImageBatch) -> Result<GeneratorOutput> {
        self.run(x, false)
    }

    /// Same network applied to an already translated image; fusion uses the
    /// cycle form, with the translated image in the role of the input.
    pub fn forward_cycle(&self, translated: &ImageBatch) -> Result<GeneratorOutput> {
        self.run(translated, true)
    }

    fn run(&self, x: &ImageBatch, cycle: bool) -> Result<GeneratorOutput> {
        let (_, _, h, w) = x.dims();
        if h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
            return Err(Error::InvalidInput(format!(
                "generator input must be at least 8x8 with sides divisible by 4, got {h}x{w}"
            )));
        }
        match self {
            Generator::One(g) => {
                let features = g.encoder.forward(x.tensor())?;
                ensure_finite(&features, "encoder")?;
                let head = g.decoder.forward(&features)?;
                ensure_finite(&head, "output head")?;
                let attention = sigmoid_mask(&head.narrow(1, 0, 1)?)?;
                let content = ContentMaskSet::from_channels(&head.narrow(1, 1, 3)?.tanh()?)?;
                let image = if cycle {
                    fuse_cycle_scheme1(x, &content, &attention)?
                } else {
                    fuse_scheme1(x, &content, &attention)?
                };
                Ok(GeneratorOutput {
                    image,
                    attention,
                    content,
                })
            }
            Generator::Two(g) => {
                let features = g.encoder.forward(x.tensor())?;
                ensure_finite(&features, "encoder")?;
                let logits = g.attention.forward(&features)?;
                ensure_finite(&logits, "attention head")?;
                let raw_content = g.content.forward(&features)?;
                ensure_finite(&raw_content, "content head")?;
                let attention = channel_softmax(&logits)?;
                let content = ContentMaskSet::from_channels(&raw_content.tanh()?)?;
                let image = if cycle {
                    fuse_cycle_scheme2(x, &content, &attention)?
                } else {
                    fuse_scheme2(x, &content, &attention)?
                };
                Ok(GeneratorOutput {
                    image,
                    attention,
                    content,
                })
            }
        }
    }
}

impl Parameterized for Generator {
    fn parameters(&self) -> &[Param] {
        match self {
            Generator::One(g) => &g.params.0,
            Generator::Two(g) => &g.params.0,
        }
    }
}

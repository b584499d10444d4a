use candle_core::{DType, Device, Tensor};

use super::generator::{scaled_width, SUPPORTED_SIZES};
use super::layers::{instance_norm, leaky_relu, Conv2d, Padding, Param, ParamBuilder, ParamSet, Parameterized};
use crate::error::{config_err, invalid, Error, Result};
use crate::masks::{AttentionMaskSet, ImageBatch, Scheme};
use crate::tensor::all_finite;

const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    /// 3 for an image discriminator, 4 for an attention-guided one that
    /// sees `[mask, image]`.
    pub in_channels: usize,
    pub image_size: usize,
    pub width_multiplier: f64,
}

impl DiscriminatorConfig {
    pub fn new(in_channels: usize, image_size: usize, width_multiplier: f64) -> Self {
        Self {
            in_channels,
            image_size,
            width_multiplier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 3 && self.in_channels != 4 {
            return Err(config_err!(
                "discriminator takes 3 (image) or 4 (mask + image) channels, got {}",
                self.in_channels
            ));
        }
        if !SUPPORTED_SIZES.contains(&self.image_size) {
            return Err(config_err!("unsupported image size {}", self.image_size));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(config_err!("width multiplier must be positive, got {}", self.width_multiplier));
        }
        Ok(())
    }

    /// Side of the logit map for a square input of `image_size`.
    ///
    /// Three stride-2 convolutions (kernel 4, padding 1) halve the side each,
    /// then two stride-1 convolutions (kernel 4, padding 1) remove one pixel
    /// each: `size / 8 - 2`, e.g. 6 at 64, 30 at 256.
    pub fn logit_size(&self) -> usize {
        self.image_size / 8 - 2
    }
}

/// PatchGAN classifier with a 70x70 receptive field: one real/fake logit
/// per overlapping patch.
#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    convs: Vec<Conv2d>,
    params: ParamSet,
}

pub fn build_discriminator(config: &DiscriminatorConfig, seed: u64, dtype: DType, device: &Device) -> Result<Discriminator> {
    config.validate()?;
    let w = scaled_width(config.width_multiplier);
    let mut pb = ParamBuilder::new(seed, dtype, device);
    let specs = [
        (config.in_channels, w, 2),
        (w, 2 * w, 2),
        (2 * w, 4 * w, 2),
        (4 * w, 8 * w, 1),
        (8 * w, 1, 1),
    ];
    let convs = specs
        .iter()
        .enumerate()
        .map(|(i, &(cin, cout, stride))| Conv2d::new(&mut pb, &format!("conv{i}"), cin, cout, 4, stride, Padding::Zero(1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Discriminator {
        config: config.clone(),
        convs,
        params: pb.finish(),
    })
}

impl Discriminator {
    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Logit map of shape `(batch, 1, h', w')`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dims4()?.1;
        if c != self.config.in_channels {
            return Err(invalid!(
                "discriminator expects {} channels, got {c}",
                self.config.in_channels
            ));
        }
        let last = self.convs.len() - 1;
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i == last {
                break;
            }
            if i > 0 {
                h = instance_norm(&h)?;
            }
            h = leaky_relu(&h, SLOPE)?;
        }
        if !all_finite(&h)? {
            return Err(Error::NonFinite {
                context: "discriminator logits".into(),
            });
        }
        Ok(h)
    }
}

impl Parameterized for Discriminator {
    fn parameters(&self) -> &[Param] {
        &self.params.0
    }
}

/// Concatenates a scheme-one attention mask in front of an image along the
/// channel axis: `(B, 1, H, W) + (B, 3, H, W) -> (B, 4, H, W)`.
pub fn concat_pair(mask: &AttentionMaskSet, image: &ImageBatch) -> Result<Tensor> {
    if mask.scheme() != Scheme::One {
        return Err(invalid!("attention-guided discriminators take scheme 1 masks only"));
    }
    let (b, _, h, w) = image.dims();
    let m = mask.tensor().dims();
    if m[0] != b || m[2] != h || m[3] != w {
        return Err(invalid!(
            "mask shape {m:?} does not match image shape {:?}",
            image.tensor().dims()
        ));
    }
    Ok(Tensor::cat(&[mask.tensor(), image.tensor()], 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::count_parameters;
    use crate::tensor::to_f64_vec;

    #[test]
    fn logit_map_at_64() {
        let cfg = DiscriminatorConfig::new(3, 64, 0.125);
        assert_eq!(cfg.logit_size(), 6);
        let d = build_discriminator(&cfg, 0, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::zeros((2, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(d.forward(&x).unwrap().dims(), &[2, 1, 6, 6]);
    }

    #[test]
    fn attention_discriminator_takes_four_channels() {
        let d = build_discriminator(&DiscriminatorConfig::new(4, 64, 0.125), 0, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::zeros((1, 4, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(d.forward(&x).is_ok());
        let x3 = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(d.forward(&x3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_other_channel_counts() {
        let cfg = DiscriminatorConfig::new(5, 64, 1.0);
        assert!(matches!(
            build_discriminator(&cfg, 0, DType::F32, &Device::Cpu),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = DiscriminatorConfig::new(3, 64, 0.25);
        let a = build_discriminator(&cfg, 5, DType::F32, &Device::Cpu).unwrap();
        let b = build_discriminator(&cfg, 5, DType::F32, &Device::Cpu).unwrap();
        for (pa, pb) in a.parameters().iter().zip(b.parameters()) {
            assert_eq!(to_f64_vec(pa.var.as_tensor()).unwrap(), to_f64_vec(pb.var.as_tensor()).unwrap());
        }
    }

    #[test]
    fn full_width_patchgan_count() {
        let d = build_discriminator(&DiscriminatorConfig::new(3, 256, 1.0), 0, DType::F32, &Device::Cpu).unwrap();
        // 3*64*16+64 + 64*128*16+128 + 128*256*16+256 + 256*512*16+512 + 512*16+1
        assert_eq!(count_parameters(&d), 2_764_737);
    }

    #[test]
    fn concat_puts_mask_first() {
        let dev = Device::Cpu;
        let mask = AttentionMaskSet::new(Tensor::rand(0f64, 1.0, (2, 1, 3, 3), &dev).unwrap(), Scheme::One).unwrap();
        let image = ImageBatch::new(Tensor::rand(-1f64, 1.0, (2, 3, 3, 3), &dev).unwrap()).unwrap();
        let pair = concat_pair(&mask, &image).unwrap();
        assert_eq!(pair.dims(), &[2, 4, 3, 3]);
        assert_eq!(
            to_f64_vec(&pair.narrow(1, 0, 1).unwrap()).unwrap(),
            to_f64_vec(mask.tensor()).unwrap()
        );
        assert_eq!(
            to_f64_vec(&pair.narrow(1, 1, 3).unwrap()).unwrap(),
            to_f64_vec(image.tensor()).unwrap()
        );
    }

    #[test]
    fn concat_rejects_scheme2_masks() {
        let dev = Device::Cpu;
        let mask = AttentionMaskSet::new(Tensor::zeros((1, 2, 3, 3), DType::F64, &dev).unwrap(), Scheme::Two).unwrap();
        let image = ImageBatch::new(Tensor::zeros((1, 3, 3, 3), DType::F64, &dev).unwrap()).unwrap();
        assert!(matches!(concat_pair(&mask, &image), Err(Error::InvalidInput(_))));
    }
}

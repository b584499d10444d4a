use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// A trainable tensor and its dotted path inside a network.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
}

/// Anything that owns trainable parameters.
pub trait Parameterized {
    /// Parameters in a fixed, build-determined order.
    fn parameters(&self) -> &[Param];
}

/// Ordered parameter list; the empty set is a valid network with no weights.
#[derive(Debug, Clone, Default)]
pub struct ParamSet(pub Vec<Param>);

impl Parameterized for ParamSet {
    fn parameters(&self) -> &[Param] {
        &self.0
    }
}

/// Number of trainable scalars.
pub fn count_parameters<P: Parameterized + ?Sized>(net: &P) -> usize {
    net.parameters().iter().map(|p| p.var.elem_count()).sum()
}

/// Allocates parameters with normal(0, 0.02) weights and zero biases from a
/// seeded stream, recording each under a dotted name.
pub(crate) struct ParamBuilder {
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
    prefix: Vec<String>,
    params: Vec<Param>,
}

pub(crate) const INIT_STD: f64 = 0.02;

impl ParamBuilder {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
            prefix: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn push(&mut self, scope: impl Into<String>) {
        self.prefix.push(scope.into());
    }

    pub fn pop(&mut self) {
        self.prefix.pop();
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut name = self.prefix.join(".");
        if !name.is_empty() {
            name.push('.');
        }
        name.push_str(leaf);
        name
    }

    fn register(&mut self, leaf: &str, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let name = self.full_name(leaf);
        self.params.push(Param {
            name,
            var: var.clone(),
        });
        Ok(var)
    }

    pub fn normal(&mut self, leaf: &str, shape: &[usize]) -> Result<Var> {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let n = shape.iter().product();
        let values = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        self.register(leaf, values, shape)
    }

    pub fn zeros(&mut self, leaf: &str, shape: &[usize]) -> Result<Var> {
        let n = shape.iter().product();
        self.register(leaf, vec![0.0; n], shape)
    }

    pub fn finish(self) -> ParamSet {
        ParamSet(self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Padding {
    Zero(usize),
    Reflect(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: Padding,
}

impl Conv2d {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        pb.push(name);
        let weight = pb.normal("weight", &[out_channels, in_channels, kernel, kernel])?;
        let bias = pb.zeros("bias", &[out_channels])?;
        pb.pop();
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (x, pad) = match self.padding {
            Padding::Zero(p) => (x.clone(), p),
            Padding::Reflect(p) => (reflect_pad(x, p)?, 0),
        };
        let y = x.conv2d(self.weight.as_tensor(), pad, self.stride, 1, 1)?;
        let bias = self.bias.as_tensor().reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&bias)?)
    }
}

/// Stride-2 transposed convolution (kernel 3, padding 1, output padding 1)
/// that exactly doubles height and width.
#[derive(Debug, Clone)]
pub(crate) struct ConvTranspose2d {
    weight: Var,
    bias: Var,
}

impl ConvTranspose2d {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        pb.push(name);
        let weight = pb.normal("weight", &[in_channels, out_channels, 3, 3])?;
        let bias = pb.zeros("bias", &[out_channels])?;
        pb.pop();
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), 1, 1, 2, 1)?;
        let bias = self.bias.as_tensor().reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&bias)?)
    }
}

/// Per-sample, per-channel normalization over the spatial axes, without
/// learned affine parameters.
pub(crate) fn instance_norm(x: &Tensor) -> Result<Tensor> {
    const EPS: f64 = 1e-5;
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(2)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(2)?;
    let normed = centered.broadcast_div(&(var + EPS)?.sqrt()?)?;
    Ok(normed.reshape((b, c, h, w))?)
}

pub(crate) fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(slope, 0.0)?)?)
}

/// Reflection padding of the two spatial axes, edge pixel excluded from the
/// mirror.
pub(crate) fn reflect_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let rows = reflect_indices(h, pad, x.device())?;
    let cols = reflect_indices(w, pad, x.device())?;
    Ok(x.index_select(&rows, 2)?.index_select(&cols, 3)?)
}

fn reflect_indices(len: usize, pad: usize, device: &Device) -> Result<Tensor> {
    assert!(pad < len, "reflection pad {pad} needs at least {} pixels", pad + 1);
    let idx: Vec<u32> = (0..len + 2 * pad)
        .map(|i| {
            let j = i as i64 - pad as i64;
            let r = if j < 0 {
                -j
            } else if j >= len as i64 {
                2 * (len as i64 - 1) - j
            } else {
                j
            };
            r as u32
        })
        .collect();
    Ok(Tensor::from_vec(idx, len + 2 * pad, device)?)
}

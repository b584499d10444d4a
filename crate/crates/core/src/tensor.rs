//! Small helpers over candle tensors shared across modules.

use candle_core::{DType, Device, Tensor};

use crate::error::Result;

/// Copies any tensor to a flat `Vec<f64>` in row-major order.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)
}

/// Scalar value of a zero- or one-element tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.sum_all()?.to_scalar()?)
}

/// `true` when no element is NaN or infinite. Sums in `f64`, where finite
/// `f32` inputs cannot overflow.
pub fn all_finite(t: &Tensor) -> Result<bool> {
    Ok(scalar(&t.to_dtype(DType::F64)?.sum_all()?)?.is_finite())
}

/// Builds a tensor from `f64` values, converting to `dtype`.
pub fn from_f64(values: Vec<f64>, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, device)?.to_dtype(dtype)?)
}

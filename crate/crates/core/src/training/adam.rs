use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{invalid, Result};
use crate::networks::Param;

/// Adam with bias correction over a fixed, ordered parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &[Param], beta1: f64, beta2: f64) -> Result<Self> {
        let m = params
            .iter()
            .map(|p| p.var.zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self {
            beta1,
            beta2,
            eps: Self::EPS,
            t: 0,
            v: m.clone(),
            m,
        })
    }

    /// Updates taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Replaces the step count and both moment lists (checkpoint restore).
    pub fn restore(&mut self, t: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(invalid!("moment count mismatch"));
        }
        for (new, old) in m.iter().chain(&v).zip(self.m.iter().chain(&self.v)) {
            if new.dims() != old.dims() {
                return Err(invalid!("moment shape {:?} does not match {:?}", new.dims(), old.dims()));
            }
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update of every parameter. A parameter without a gradient is
    /// treated as having a zero gradient.
    pub fn step(&mut self, params: &[Param], grads: &GradStore, lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(invalid!("optimizer built for {} parameters, got {}", self.m.len(), params.len()));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, p) in params.iter().enumerate() {
            let g = match grads.get(p.var.as_tensor()) {
                Some(g) => g.detach(),
                None => p.var.zeros_like()?,
            };
            let m = ((&self.m[i] * b1)? + (&g * (1.0 - b1))?)?.detach();
            let v = ((&self.v[i] * b2)? + (g.sqr()? * (1.0 - b2))?)?.detach();
            let denom = ((&v / bc2)?.sqrt()? + self.eps)?;
            let update = ((&m / bc1)?.div(&denom)? * lr)?;
            p.var.set(&(p.var.as_tensor() - update)?.detach())?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn param(values: &[f64]) -> Param {
        Param {
            name: "p".into(),
            var: Var::from_vec(values.to_vec(), values.len(), &Device::Cpu).unwrap(),
        }
    }

    /// Scalar reference implementation of the same update rule.
    fn reference(mut x: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.5, 0.999, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        x
    }

    #[test]
    fn matches_scalar_reference_on_quadratic() {
        // Minimize sum((p - 3)^2); gradient 2 (p - 3).
        let p = param(&[0.0, 10.0]);
        let params = [p.clone()];
        let mut adam = Adam::new(&params, 0.5, 0.999).unwrap();
        let mut seen = vec![Vec::new(), Vec::new()];
        let mut xs = vec![0.0, 10.0];
        for _ in 0..5 {
            let loss = (p.var.as_tensor() - 3.0).unwrap().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            for (k, x) in xs.iter().enumerate() {
                seen[k].push(2.0 * (x - 3.0));
            }
            adam.step(&params, &grads, 0.1).unwrap();
            for (k, x) in xs.iter_mut().enumerate() {
                *x = reference([0.0, 10.0][k], &seen[k], 0.1);
            }
        }
        let got: Vec<f64> = p.var.as_tensor().to_vec1().unwrap();
        for k in 0..2 {
            assert!((got[k] - xs[k]).abs() < 1e-12, "{} vs {}", got[k], xs[k]);
        }
        assert_eq!(adam.t(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = param(&[1.0]);
        let params = [p.clone()];
        let mut adam = Adam::new(&params, 0.5, 0.999).unwrap();
        let grads = (p.var.as_tensor() * 4.0).unwrap().sum_all().unwrap().backward().unwrap();
        adam.step(&params, &grads, 0.01).unwrap();
        let got: Vec<f64> = p.var.as_tensor().to_vec1().unwrap();
        assert!((got[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn missing_gradient_is_zero() {
        let p = param(&[1.0]);
        let q = Param {
            name: "q".into(),
            var: Var::zeros(1, DType::F64, &Device::Cpu).unwrap(),
        };
        let params = [p, q.clone()];
        let mut adam = Adam::new(&params, 0.5, 0.999).unwrap();
        let grads = params[0].var.as_tensor().sum_all().unwrap().backward().unwrap();
        adam.step(&params, &grads, 0.1).unwrap();
        assert_eq!(q.var.as_tensor().to_vec1::<f64>().unwrap(), vec![0.0]);
    }
}

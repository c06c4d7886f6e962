//! Minimal dense tensor engine: a fixed set of layers with exact analytic
//! backward passes, softmax cross-entropy, Adam, and a central-difference
//! gradient oracle. Everything runs in `f64`.

mod adam;
mod layer;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layer::{Context, Layer, LayerKind};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_batch};

use crate::error::{Result, SimError};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(SimError::Tensor(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(SimError::Tensor(format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
            grad: None,
        }
    }

    /// Builds a `[rows, cols]` tensor from row slices.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let values: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(vec![rows.len(), cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leading extent, treated as the batch dimension by layers.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Shape without the leading batch dimension.
    pub fn sample_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.values.len() || shape.iter().any(|&e| e == 0) {
            return Err(SimError::Tensor(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(SimError::Tensor(format!(
                "gradient of length {} for tensor of length {}",
                delta.len(),
                self.values.len()
            )));
        }
        for (g, d) in self.grad_mut().iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(SimError::NonFinite(op))
        }
    }
}

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every
/// coordinate of `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut out = vec![0.0; x.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = probe.values[i];
        probe.values[i] = orig + eps;
        let up = f(&probe);
        probe.values[i] = orig - eps;
        let down = f(&probe);
        probe.values[i] = orig;
        *slot = (up - down) / (2.0 * eps);
    }
    Tensor {
        shape: x.shape.clone(),
        values: out,
        grad: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn grad_buffer_matches_values() {
        let mut t = Tensor::vector(vec![1.0, 2.0]);
        assert!(t.grad().is_none());
        t.accumulate_grad(&[0.5, 0.5]).unwrap();
        t.accumulate_grad(&[0.5, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.0, 1.5]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }

    #[test]
    fn finite_diff_square() {
        let g = finite_diff_grad(|t| t.values()[0].powi(2), &Tensor::vector(vec![3.0]), 1e-5);
        assert!((g.values()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let x = Tensor::vector(vec![1.0, -2.0, 0.3]);
        let g = finite_diff_grad(|_| 4.2, &x, 1e-5);
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_sum_is_ones() {
        let x = Tensor::vector(vec![1.0, -2.0, 0.3, 11.0]);
        let g = finite_diff_grad(|t| t.values().iter().sum(), &x, 1e-5);
        for v in g.values() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }
}

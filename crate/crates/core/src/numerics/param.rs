use serde::{Deserialize, Serialize};

use super::Tensor2;
use crate::error::{HptError, Result};

/// A named learnable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor2,
    pub grad: Tensor2,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor2) -> Self {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate(&mut self, g: &Tensor2) {
        self.grad.add_assign(g);
    }
}

/// An ordered collection of parameters addressable by index.
pub trait ParameterSet {
    fn param_count(&self) -> usize;
    fn param(&self, index: usize) -> &Parameter;
    fn param_mut(&mut self, index: usize) -> &mut Parameter;

    fn zero_grads(&mut self) {
        for i in 0..self.param_count() {
            self.param_mut(i).zero_grad();
        }
    }

    fn grads(&self) -> Vec<Tensor2> {
        (0..self.param_count())
            .map(|i| self.param(i).grad.clone())
            .collect()
    }
}

impl ParameterSet for Vec<Parameter> {
    fn param_count(&self) -> usize {
        self.len()
    }

    fn param(&self, index: usize) -> &Parameter {
        &self[index]
    }

    fn param_mut(&mut self, index: usize) -> &mut Parameter {
        &mut self[index]
    }
}

/// Central-difference gradient estimate `(f(θ+h) − f(θ−h)) / 2h` for every
/// scalar entry of every parameter. Values are restored exactly afterwards.
pub fn finite_diff_grad<S, F>(params: &mut S, h: f64, mut loss_fn: F) -> Result<Vec<Tensor2>>
where
    S: ParameterSet + ?Sized,
    F: FnMut(&S) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(HptError::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut out = Vec::with_capacity(params.param_count());
    for p in 0..params.param_count() {
        let (rows, cols) = params.param(p).value.shape();
        let mut grad = Tensor2::zeros(rows, cols);
        for k in 0..rows * cols {
            let original = params.param(p).value.data()[k];
            params.param_mut(p).value.data_mut()[k] = original + h;
            let plus = loss_fn(params);
            params.param_mut(p).value.data_mut()[k] = original - h;
            let minus = loss_fn(params);
            params.param_mut(p).value.data_mut()[k] = original;
            grad.data_mut()[k] = (plus? - minus?) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over matching entries.
pub fn max_relative_error(analytic: &Tensor2, numeric: &Tensor2, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `value ← value − lr·grad`, then clears every gradient.
pub fn sgd_step<S: ParameterSet + ?Sized>(params: &mut S, lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(HptError::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    for i in 0..params.param_count() {
        let p = params.param_mut(i);
        p.grad.ensure_finite(&format!("gradient of {}", p.name))?;
        let Parameter { value, grad, .. } = p;
        for (v, g) in value.data_mut().iter_mut().zip(grad.data()) {
            *v -= lr * g;
        }
        p.zero_grad();
    }
    Ok(())
}

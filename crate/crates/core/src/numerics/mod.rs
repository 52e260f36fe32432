//! Dense `f64` linear algebra with hand-derived reverse-mode gradients.
//!
//! Every layer exposes a forward pass that returns a cache and a backward
//! pass that consumes it. [`finite_diff_grad`] is the central-difference
//! oracle used to verify all of them.

mod layers;
mod param;
mod tensor;

pub use layers::{gelu, gelu_backward, AffineMap, LayerNorm, LayerNormCache, Linear};
pub use param::{finite_diff_grad, max_relative_error, sgd_step, Parameter, ParameterSet};
pub use tensor::{dot, norm, Tensor2};

use crate::error::{HptError, Result};

/// Row-wise softmax, stabilised by subtracting each row's maximum.
pub fn softmax_rows(x: &Tensor2) -> Result<Tensor2> {
    x.ensure_finite("softmax_rows input")?;
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax of a single vector.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Gradient of a row-wise softmax given its output `y` and upstream `dy`.
pub fn softmax_rows_backward(y: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let mut dx = Tensor2::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let inner = dot(yr, dyr);
        for ((d, &yv), &g) in dx.row_mut(r).iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - inner);
        }
    }
    dx
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(HptError::Shape(format!(
            "cosine_similarity of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(HptError::ZeroNorm("cosine_similarity".into()));
    }
    let c = dot(a, b) / (na * nb);
    if !c.is_finite() {
        return Err(HptError::NonFinite("cosine_similarity".into()));
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// Gradients of `cos(a, b)` with respect to `a` and `b`, scaled by `upstream`.
pub fn cosine_similarity_backward(a: &[f64], b: &[f64], upstream: f64) -> (Vec<f64>, Vec<f64>) {
    let na = norm(a);
    let nb = norm(b);
    let c = dot(a, b) / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| upstream * (y / (na * nb) - c * x / (na * na)))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| upstream * (x / (na * nb) - c * y / (nb * nb)))
        .collect();
    (da, db)
}

/// Returns `v / ‖v‖`.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(HptError::ZeroNorm("normalize".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Gradient of `v / ‖v‖` with respect to `v`.
pub fn normalize_backward(v: &[f64], upstream: &[f64]) -> Vec<f64> {
    let n = norm(v);
    let u: Vec<f64> = v.iter().map(|x| x / n).collect();
    let proj = dot(&u, upstream);
    upstream
        .iter()
        .zip(&u)
        .map(|(g, ui)| (g - proj * ui) / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_row() {
        let y = softmax_rows(&Tensor2::row_vector(&[0.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_ln2_row() {
        let y = softmax_rows(&Tensor2::row_vector(&[2f64.ln(), 0.0])).unwrap();
        assert!((y.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        // Reference from a 50-digit evaluation: 1/(1+e^-1), e^-1/(1+e^-1).
        let y = softmax_rows(&Tensor2::row_vector(&[1000.0, 999.0])).unwrap();
        assert!(y.is_finite());
        assert!((y.sum() - 1.0).abs() < 1e-12);
        assert!((y.get(0, 0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((y.get(0, 1) - 0.268_941_421_369_995_1).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(softmax_rows(&Tensor2::row_vector(&[f64::NAN, 0.0])).is_err());
        assert!(softmax_rows(&Tensor2::row_vector(&[f64::INFINITY, 0.0])).is_err());
    }

    #[test]
    fn cosine_endpoints() {
        let v = [1.0, -2.0, 0.5];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_zero_norm_errors() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(HptError::ZeroNorm(_))
        ));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }
}

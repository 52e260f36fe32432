use serde::{Deserialize, Serialize};

use super::{Parameter, Tensor2};

/// Frozen affine layer `y = x·W + b` with `W: in×out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl Linear {
    pub fn new(weight: Tensor2, bias: Tensor2) -> Self {
        assert_eq!(bias.shape(), (1, weight.cols()), "bias must be 1×out");
        Self { weight, bias }
    }

    pub fn forward(&self, x: &Tensor2) -> Tensor2 {
        let mut y = x.matmul(&self.weight);
        add_row_broadcast(&mut y, self.bias.row(0));
        y
    }

    /// Returns `(dx, dW, db)`.
    pub fn backward(&self, x: &Tensor2, dy: &Tensor2) -> (Tensor2, Tensor2, Tensor2) {
        let dx = dy.matmul_t(&self.weight);
        let dw = x.t_matmul(dy);
        let db = column_sums(dy);
        (dx, dw, db)
    }
}

/// Learnable affine map `v ↦ v·W + b` over `d`-dimensional row vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl AffineMap {
    pub fn identity(name: &str, dim: usize) -> Self {
        Self {
            weight: Parameter::new(format!("{name}.weight"), Tensor2::identity(dim)),
            bias: Parameter::new(format!("{name}.bias"), Tensor2::zeros(1, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&self, x: &Tensor2) -> Tensor2 {
        let mut y = x.matmul(&self.weight.value);
        add_row_broadcast(&mut y, self.bias.value.row(0));
        y
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.forward(&Tensor2::row_vector(v)).into_data()
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Tensor2, dy: &Tensor2) -> Tensor2 {
        self.weight.accumulate(&x.t_matmul(dy));
        self.bias.accumulate(&column_sums(dy));
        dy.matmul_t(&self.weight.value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Tensor2,
    pub beta: Tensor2,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Tensor2,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor2::filled(1, dim, 1.0),
            beta: Tensor2::zeros(1, dim),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor2) -> (Tensor2, LayerNormCache) {
        let d = x.cols();
        let mut xhat = Tensor2::zeros(x.rows(), d);
        let mut y = Tensor2::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                y.set(r, c, h * self.gamma.get(0, c) + self.beta.get(0, c));
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &LayerNormCache, dy: &Tensor2) -> (Tensor2, Tensor2, Tensor2) {
        let d = dy.cols();
        let mut dx = Tensor2::zeros(dy.rows(), d);
        let mut dgamma = Tensor2::zeros(1, d);
        let mut dbeta = Tensor2::zeros(1, d);
        for r in 0..dy.rows() {
            let xh = cache.xhat.row(r);
            let g: Vec<f64> = (0..d)
                .map(|c| dy.get(r, c) * self.gamma.get(0, c))
                .collect();
            let mean_g = g.iter().sum::<f64>() / d as f64;
            let mean_gx = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for c in 0..d {
                dx.set(r, c, cache.inv_std[r] * (g[c] - mean_g - xh[c] * mean_gx));
                dgamma.data_mut()[c] += dy.get(r, c) * xh[c];
                dbeta.data_mut()[c] += dy.get(r, c);
            }
        }
        (dx, dgamma, dbeta)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_backward(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) fn add_row_broadcast(y: &mut Tensor2, row: &[f64]) {
    for r in 0..y.rows() {
        for (v, b) in y.row_mut(r).iter_mut().zip(row) {
            *v += b;
        }
    }
}

pub(crate) fn column_sums(x: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(1, x.cols());
    for r in 0..x.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    out
}

//! Scaled dot-product attention with an optional per-layer modification
//! matrix, applied either additively or multiplicatively to the raw
//! `QKᵀ` logits before scaling.

use serde::{Deserialize, Serialize};

use crate::error::{HptError, Result};
use crate::numerics::{softmax_in_place, softmax_rows_backward, Tensor2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModMode {
    None,
    Additive,
    Multiplicative,
    MultiplicativeSelective,
}

impl ModMode {
    pub fn is_multiplicative(self) -> bool {
        matches!(
            self,
            ModMode::Multiplicative | ModMode::MultiplicativeSelective
        )
    }
}

/// The per-layer matrix `M` aligned to a token sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionModMatrix {
    pub mode: ModMode,
    pub values: Tensor2,
}

impl AttentionModMatrix {
    pub fn none(seq_len: usize) -> Self {
        Self {
            mode: ModMode::None,
            values: Tensor2::zeros(seq_len, seq_len),
        }
    }

    pub fn new(mode: ModMode, values: Tensor2) -> Result<Self> {
        let m = Self { mode, values };
        m.validate(m.values.rows())?;
        Ok(m)
    }

    pub fn seq_len(&self) -> usize {
        self.values.rows()
    }

    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.values.shape() != (seq_len, seq_len) {
            return Err(HptError::Shape(format!(
                "modification matrix is {}x{}, sequence has {seq_len} tokens",
                self.values.rows(),
                self.values.cols()
            )));
        }
        self.values.ensure_finite("attention modification matrix")?;
        if self.mode.is_multiplicative() && self.values.data().iter().any(|&v| v <= 0.0) {
            return Err(HptError::InvalidArgument(
                "multiplicative attention weights must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Single-head attention `softmax(mod(QKᵀ, M) / √d_k) V` with `d_k = Q.cols`.
pub fn modified_attention(
    q: &Tensor2,
    k: &Tensor2,
    v: &Tensor2,
    m: &AttentionModMatrix,
) -> Result<Tensor2> {
    if q.cols() != k.cols() || q.rows() != k.rows() || v.rows() != k.rows() {
        return Err(HptError::Shape(format!(
            "Q {:?}, K {:?}, V {:?} do not conform",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    m.validate(q.rows())?;
    let (out, _) = head_forward(q, k, v, m);
    out.ensure_finite("attention output")?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub(crate) struct HeadCache {
    pub q: Tensor2,
    pub k: Tensor2,
    pub v: Tensor2,
    pub scores: Tensor2,
    pub probs: Tensor2,
}

pub(crate) fn head_forward(
    q: &Tensor2,
    k: &Tensor2,
    v: &Tensor2,
    m: &AttentionModMatrix,
) -> (Tensor2, HeadCache) {
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul_t(k);
    let mut probs = match m.mode {
        ModMode::None => scores.clone(),
        ModMode::Additive => scores.add(&m.values),
        ModMode::Multiplicative | ModMode::MultiplicativeSelective => scores.hadamard(&m.values),
    };
    for r in 0..probs.rows() {
        let row = probs.row_mut(r);
        for x in row.iter_mut() {
            *x *= scale;
        }
        softmax_in_place(row);
    }
    let out = probs.matmul(v);
    (
        out,
        HeadCache {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            scores,
            probs,
        },
    )
}

/// Returns `(dQ, dK, dV, dM)`; `dM` is `None` when the mode has no matrix.
pub(crate) fn head_backward(
    cache: &HeadCache,
    m: &AttentionModMatrix,
    dout: &Tensor2,
) -> (Tensor2, Tensor2, Tensor2, Option<Tensor2>) {
    let scale = 1.0 / (cache.q.cols() as f64).sqrt();
    let dv = cache.probs.t_matmul(dout);
    let dprobs = dout.matmul_t(&cache.v);
    let dlogits = softmax_rows_backward(&cache.probs, &dprobs).scale(scale);
    let (dscores, dm) = match m.mode {
        ModMode::None => (dlogits, None),
        ModMode::Additive => (dlogits.clone(), Some(dlogits)),
        ModMode::Multiplicative | ModMode::MultiplicativeSelective => {
            let dm = dlogits.hadamard(&cache.scores);
            (dlogits.hadamard(&m.values), Some(dm))
        }
    };
    let dq = dscores.matmul(&cache.k);
    let dk = dscores.t_matmul(&cache.q);
    (dq, dk, dv, dm)
}

use serde::{Deserialize, Serialize};

use crate::error::{HptError, Result};
use crate::numerics::{cosine_similarity, cosine_similarity_backward, softmax, AffineMap};

/// Loss components of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_asy: f64,
    pub l_c: f64,
    pub total: f64,
    /// Batch-mean cross-entropies of `p1`, `p2` and `p_avg`.
    pub ce: [f64; 3],
}

pub fn total_loss(l_asy: f64, l_c: f64, lambda: f64) -> f64 {
    l_asy + lambda * l_c
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn scaled_cosines(anchor: &[f64], others: &[Vec<f64>], s: f64) -> Result<Vec<f64>> {
    others
        .iter()
        .map(|o| Ok(s * cosine_similarity(anchor, o)?))
        .collect()
}

/// `(p1, p2, p_avg)` of one image over all candidate classes.
pub fn pair_probabilities(
    frozen_img: &[f64],
    prompted_img: &[f64],
    frozen_txt: &[Vec<f64>],
    prompted_txt: &[Vec<f64>],
    s: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if frozen_txt.len() != prompted_txt.len() || frozen_txt.is_empty() {
        return Err(HptError::Shape(format!(
            "{} frozen and {} prompted class embeddings",
            frozen_txt.len(),
            prompted_txt.len()
        )));
    }
    let p1 = softmax(&scaled_cosines(frozen_img, prompted_txt, s)?);
    let p2 = softmax(&scaled_cosines(prompted_img, frozen_txt, s)?);
    let avg = p1.iter().zip(&p2).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((p1, p2, avg))
}

/// Asymmetric loss value with gradients towards the prompted embeddings.
#[derive(Clone, Debug)]
pub struct AsymmetricOutput {
    /// Weighted sum of the three batch-mean cross-entropies.
    pub loss: f64,
    pub ce: [f64; 3],
    /// `∂loss/∂prompted_txt[k]`.
    pub d_prompted_txt: Vec<Vec<f64>>,
    /// `∂loss/∂prompted_img[b]`.
    pub d_prompted_img: Vec<Vec<f64>>,
}

/// `CE(p1) + CE(p2) + CE(p_avg)` averaged over the batch, where
/// `p1 = softmax(s·cos(frozen_img, prompted_txt))` and
/// `p2 = softmax(s·cos(prompted_img, frozen_txt))`.
pub fn asymmetric_loss(
    frozen_img: &[Vec<f64>],
    prompted_img: &[Vec<f64>],
    frozen_txt: &[Vec<f64>],
    prompted_txt: &[Vec<f64>],
    labels: &[usize],
    s: f64,
) -> Result<f64> {
    Ok(asymmetric_loss_with_grads(
        frozen_img,
        prompted_img,
        frozen_txt,
        prompted_txt,
        labels,
        s,
        [1.0; 3],
    )?
    .loss)
}

pub fn asymmetric_loss_with_grads(
    frozen_img: &[Vec<f64>],
    prompted_img: &[Vec<f64>],
    frozen_txt: &[Vec<f64>],
    prompted_txt: &[Vec<f64>],
    labels: &[usize],
    s: f64,
    weights: [f64; 3],
) -> Result<AsymmetricOutput> {
    let batch = labels.len();
    if batch == 0 || frozen_img.len() != batch || prompted_img.len() != batch {
        return Err(HptError::Shape(format!(
            "batch of {batch} labels, {} frozen and {} prompted images",
            frozen_img.len(),
            prompted_img.len()
        )));
    }
    let k = prompted_txt.len();
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(HptError::InvalidArgument(format!(
            "label {y} outside {k} classes"
        )));
    }
    let mut ce = [0.0; 3];
    let mut d_txt = vec![vec![0.0; prompted_txt.first().map_or(0, Vec::len)]; k];
    let mut d_img = Vec::with_capacity(batch);
    let inv_b = 1.0 / batch as f64;
    for b in 0..batch {
        let y = labels[b];
        let a = scaled_cosines(&frozen_img[b], prompted_txt, s)?;
        let c = scaled_cosines(&prompted_img[b], frozen_txt, s)?;
        let (p1, p2) = (softmax(&a), softmax(&c));
        let avg_y = 0.5 * (p1[y] + p2[y]);
        ce[0] += log_sum_exp(&a) - a[y];
        ce[1] += log_sum_exp(&c) - c[y];
        ce[2] -= avg_y.ln();

        // ∂(-ln p_avg[y])/∂logit_j = -(1/2 p_avg[y]) · p[y](δ_jy - p_j)
        let mut da = vec![0.0; k];
        let mut dc = vec![0.0; k];
        for j in 0..k {
            let hot = if j == y { 1.0 } else { 0.0 };
            da[j] = weights[0] * (p1[j] - hot) - weights[2] * 0.5 / avg_y * p1[y] * (hot - p1[j]);
            dc[j] = weights[1] * (p2[j] - hot) - weights[2] * 0.5 / avg_y * p2[y] * (hot - p2[j]);
        }
        let mut g_img = vec![0.0; prompted_img[b].len()];
        for j in 0..k {
            let (_, gt) =
                cosine_similarity_backward(&frozen_img[b], &prompted_txt[j], s * da[j] * inv_b);
            for (acc, g) in d_txt[j].iter_mut().zip(gt) {
                *acc += g;
            }
            let (gi, _) =
                cosine_similarity_backward(&prompted_img[b], &frozen_txt[j], s * dc[j] * inv_b);
            for (acc, g) in g_img.iter_mut().zip(gi) {
                *acc += g;
            }
        }
        d_img.push(g_img);
    }
    for v in &mut ce {
        *v *= inv_b;
    }
    let loss = ce.iter().zip(&weights).map(|(c, w)| c * w).sum();
    Ok(AsymmetricOutput {
        loss,
        ce,
        d_prompted_txt: d_txt,
        d_prompted_img: d_img,
    })
}

/// `1 − cos(φ(z), t)`.
pub fn consistency_loss(z: &[f64], t_emb: &[f64], adapter: &AffineMap) -> Result<f64> {
    let phi = crate::encoders::apply_adapter(z, adapter)?;
    Ok(1.0 - cosine_similarity(&phi, t_emb)?)
}

/// `∂L_c/∂φ(z)` for an already adapted `phi_z`, scaled by `weight`.
pub(crate) fn consistency_grad(phi_z: &[f64], t_emb: &[f64], weight: f64) -> Vec<f64> {
    cosine_similarity_backward(phi_z, t_emb, -weight).0
}

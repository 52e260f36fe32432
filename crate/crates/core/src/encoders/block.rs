use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{head_backward, head_forward, AttentionModMatrix, HeadCache};
use super::EncoderConfig;
use crate::numerics::{gelu, gelu_backward, LayerNorm, LayerNormCache, Linear, Tensor2};

/// Pre-norm transformer layer: `x + Attn(LN(x))`, then `+ MLP(LN(·))`.
/// Weights are frozen; backward only propagates to the input and to `M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub wq: Tensor2,
    pub wk: Tensor2,
    pub wv: Tensor2,
    pub wo: Tensor2,
    pub ln2: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockCache {
    ln1: LayerNormCache,
    heads: Vec<HeadCache>,
    ln2: LayerNormCache,
    normed2: Tensor2,
    hidden_pre: Tensor2,
}

impl BlockCache {
    /// Head-averaged attention probabilities.
    pub fn mean_attention(&self) -> Tensor2 {
        let n = self.heads.len() as f64;
        let mut acc = self.heads[0].probs.clone();
        for h in &self.heads[1..] {
            acc.add_assign(&h.probs);
        }
        acc.scale(1.0 / n)
    }
}

impl TransformerBlock {
    pub fn random<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let d = config.model_dim;
        let h = config.mlp_dim();
        let std_d = 1.0 / (d as f64).sqrt();
        let std_h = 1.0 / (h as f64).sqrt();
        Self {
            ln1: LayerNorm::new(d),
            wq: Tensor2::random_normal(d, d, std_d, rng),
            wk: Tensor2::random_normal(d, d, std_d, rng),
            wv: Tensor2::random_normal(d, d, std_d, rng),
            wo: Tensor2::random_normal(d, d, std_d, rng),
            ln2: LayerNorm::new(d),
            mlp_in: Linear::new(
                Tensor2::random_normal(d, h, std_d, rng),
                Tensor2::random_normal(1, h, 0.1, rng),
            ),
            mlp_out: Linear::new(
                Tensor2::random_normal(h, d, std_h, rng),
                Tensor2::zeros(1, d),
            ),
        }
    }

    pub fn num_heads(&self, head_dim: usize) -> usize {
        self.wq.cols() / head_dim
    }

    /// `m` must already be validated against `x.rows()`.
    pub(crate) fn forward(
        &self,
        x: &Tensor2,
        m: &AttentionModMatrix,
        num_heads: usize,
    ) -> (Tensor2, BlockCache) {
        let d = x.cols();
        let dk = d / num_heads;
        let (a, ln1) = self.ln1.forward(x);
        let q = a.matmul(&self.wq);
        let k = a.matmul(&self.wk);
        let v = a.matmul(&self.wv);
        let mut concat = Tensor2::zeros(x.rows(), d);
        let mut heads = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            let (s, e) = (h * dk, (h + 1) * dk);
            let (out, cache) = head_forward(
                &q.slice_cols(s, e),
                &k.slice_cols(s, e),
                &v.slice_cols(s, e),
                m,
            );
            concat.set_cols(s, &out);
            heads.push(cache);
        }
        let x1 = x.add(&concat.matmul(&self.wo));
        let (normed2, ln2) = self.ln2.forward(&x1);
        let hidden_pre = self.mlp_in.forward(&normed2);
        let hidden = hidden_pre.map(gelu);
        let y = x1.add(&self.mlp_out.forward(&hidden));
        (
            y,
            BlockCache {
                ln1,
                heads,
                ln2,
                normed2,
                hidden_pre,
            },
        )
    }

    /// Returns `(dx, dM)` where `dM` sums the per-head matrix gradients.
    pub(crate) fn backward(
        &self,
        cache: &BlockCache,
        m: &AttentionModMatrix,
        dy: &Tensor2,
    ) -> (Tensor2, Option<Tensor2>) {
        let hidden = cache.hidden_pre.map(gelu);
        let (dhidden, _, _) = self.mlp_out.backward(&hidden, dy);
        let dhidden_pre = dhidden.zip_map(&cache.hidden_pre, |g, x| g * gelu_backward(x));
        let (dnormed2, _, _) = self.mlp_in.backward(&cache.normed2, &dhidden_pre);
        let (dx1_ln, _, _) = self.ln2.backward(&cache.ln2, &dnormed2);
        let dx1 = dy.add(&dx1_ln);

        let dconcat = dx1.matmul_t(&self.wo);
        let d = dy.cols();
        let num_heads = cache.heads.len();
        let dk = d / num_heads;
        let n = dy.rows();
        let mut dq = Tensor2::zeros(n, d);
        let mut dkm = Tensor2::zeros(n, d);
        let mut dv = Tensor2::zeros(n, d);
        let mut dm: Option<Tensor2> = None;
        for (h, hc) in cache.heads.iter().enumerate() {
            let (s, e) = (h * dk, (h + 1) * dk);
            let (gq, gk, gv, gm) = head_backward(hc, m, &dconcat.slice_cols(s, e));
            dq.set_cols(s, &gq);
            dkm.set_cols(s, &gk);
            dv.set_cols(s, &gv);
            if let Some(gm) = gm {
                match dm.as_mut() {
                    Some(acc) => acc.add_assign(&gm),
                    None => dm = Some(gm),
                }
            }
        }
        let da = dq
            .matmul_t(&self.wq)
            .add(&dkm.matmul_t(&self.wk))
            .add(&dv.matmul_t(&self.wv));
        let (dx_ln, _, _) = self.ln1.backward(&cache.ln1, &da);
        (dx1.add(&dx_ln), dm)
    }
}

/// Frozen layer stack with the final norm and output projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub layers: Vec<TransformerBlock>,
    pub final_ln: LayerNorm,
    pub projection: Tensor2,
}

#[derive(Clone, Debug)]
pub(crate) struct ReadoutCache {
    ln: LayerNormCache,
}

impl Backbone {
    pub fn random<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let d = config.model_dim;
        let layers = (0..config.num_layers)
            .map(|_| TransformerBlock::random(config, rng))
            .collect();
        Self {
            layers,
            final_ln: LayerNorm::new(d),
            projection: Tensor2::random_normal(d, d, 1.0 / (d as f64).sqrt(), rng),
        }
    }

    /// Projects one final-layer state into the shared embedding space.
    pub(crate) fn readout(&self, state: &[f64]) -> (Vec<f64>, ReadoutCache) {
        let (normed, ln) = self.final_ln.forward(&Tensor2::row_vector(state));
        (
            normed.matmul(&self.projection).into_data(),
            ReadoutCache { ln },
        )
    }

    pub(crate) fn readout_backward(&self, cache: &ReadoutCache, dz: &[f64]) -> Vec<f64> {
        let dnormed = Tensor2::row_vector(dz).matmul_t(&self.projection);
        self.final_ln.backward(&cache.ln, &dnormed).0.into_data()
    }
}

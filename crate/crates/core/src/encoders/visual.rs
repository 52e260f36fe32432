use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionModMatrix;
use super::block::{Backbone, BlockCache, ReadoutCache};
use super::text::TextEncoder;
use super::tokenizer::EOT_ID;
use super::EncoderConfig;
use crate::error::{HptError, Result};
use crate::numerics::Tensor2;

/// Minimal deep-prompted visual encoder over `[prompts | features | readout]`.
/// The embedding is the projected final state of the readout token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualEncoder {
    pub config: EncoderConfig,
    pub backbone: Backbone,
    pub readout_token: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VisualPass {
    pub embedding: Vec<f64>,
    n_prompts: usize,
    seq_len: usize,
    blocks: Vec<BlockCache>,
    readout: ReadoutCache,
}

impl VisualEncoder {
    pub fn random(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5649_5355_414c);
        let readout_token = Tensor2::random_normal(1, config.model_dim, 1.0, &mut rng).into_data();
        let backbone = Backbone::random(&config, &mut rng);
        Ok(Self {
            config,
            backbone,
            readout_token,
        })
    }

    /// A visual tower that reuses the frozen layers of `text`, reading out
    /// through the end-of-text embedding. Both towers then map matching
    /// token content to nearby embeddings, which stands in for contrastive
    /// pre-training.
    pub fn sharing_backbone(text: &TextEncoder) -> Self {
        Self {
            config: text.config.clone(),
            backbone: text.backbone.clone(),
            readout_token: text.embed_token(EOT_ID).to_vec(),
        }
    }

    /// `prompts` holds one `N_v × d` block per layer; `frozen` ignores them.
    pub fn visual_forward(
        &self,
        features: &Tensor2,
        prompts: &[Tensor2],
        frozen: bool,
    ) -> Result<Vec<f64>> {
        let prompts = if frozen { None } else { Some(prompts) };
        Ok(self.forward(features, prompts)?.embedding)
    }

    pub fn forward(&self, features: &Tensor2, prompts: Option<&[Tensor2]>) -> Result<VisualPass> {
        let d = self.config.model_dim;
        if features.cols() != d || features.rows() == 0 {
            return Err(HptError::Shape(format!(
                "feature tokens are {}x{}, expected Tx{d} with T > 0",
                features.rows(),
                features.cols()
            )));
        }
        features.ensure_finite("visual feature tokens")?;
        let n_layers = self.config.num_layers;
        let n_prompts = match prompts {
            None => 0,
            Some(p) => {
                if p.len() != n_layers {
                    return Err(HptError::Shape(format!(
                        "visual prompts for {} layers, encoder has {n_layers}",
                        p.len()
                    )));
                }
                let rows = p[0].rows();
                if p.iter().any(|t| t.shape() != (rows, d)) {
                    return Err(HptError::Shape(
                        "visual prompt blocks differ in shape".into(),
                    ));
                }
                rows
            }
        };
        let n = n_prompts + features.rows() + 1;
        if n > self.config.max_seq_len {
            return Err(HptError::SequenceTooLong {
                len: n,
                max: self.config.max_seq_len,
            });
        }
        let none = AttentionModMatrix::none(n);
        let mut x = Tensor2::zeros(n, d);
        x.set_rows(n_prompts, features);
        x.set_row(n - 1, &self.readout_token);
        let mut blocks = Vec::with_capacity(n_layers);
        for (l, block) in self.backbone.layers.iter().enumerate() {
            if let Some(p) = prompts {
                if n_prompts > 0 {
                    x.set_rows(0, &p[l]);
                }
            }
            let (y, cache) = block.forward(&x, &none, self.config.num_heads);
            blocks.push(cache);
            x = y;
        }
        x.ensure_finite("visual encoder state")?;
        let (embedding, readout) = self.backbone.readout(x.row(n - 1));
        Ok(VisualPass {
            embedding,
            n_prompts,
            seq_len: n,
            blocks,
            readout,
        })
    }

    /// Gradient of the embedding with respect to each layer's prompts.
    pub fn backward(&self, pass: &VisualPass, dz: &[f64]) -> Vec<Tensor2> {
        let d = self.config.model_dim;
        let n_layers = self.config.num_layers;
        let mut grads = vec![Tensor2::zeros(pass.n_prompts, d); n_layers];
        let seq_len = pass.seq_len;
        let none = AttentionModMatrix::none(seq_len);
        let mut dy = Tensor2::zeros(seq_len, d);
        dy.set_row(
            seq_len - 1,
            &self.backbone.readout_backward(&pass.readout, dz),
        );
        for l in (0..n_layers).rev() {
            let (mut dx, _) = self.backbone.layers[l].backward(&pass.blocks[l], &none, &dy);
            grads[l] = dx.slice_rows(0, pass.n_prompts);
            for r in 0..pass.n_prompts {
                dx.row_mut(r).fill(0.0);
            }
            dy = dx;
        }
        grads
    }
}

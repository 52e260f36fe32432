use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionModMatrix;
use super::block::{Backbone, BlockCache, ReadoutCache};
use super::bundle::{LayerStates, PromptBundle};
use super::sequence::{SegmentLayout, TokenSequence};
use super::tokenizer::Tokenizer;
use super::EncoderConfig;
use crate::error::{HptError, Result};
use crate::numerics::Tensor2;

/// Frozen text encoder: token embeddings, layer stack, final norm and
/// `TextProj`. The same weights serve the plain path and the hierarchical
/// prompted path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub config: EncoderConfig,
    pub token_embedding: Tensor2,
    pub backbone: Backbone,
}

/// Hook applied to each layer's output before the next layer's input is
/// assembled. Used to probe which positions influence the embedding.
pub type LayerOutputHook<'a> = &'a dyn Fn(usize, &mut Tensor2);

/// Forward state of one hierarchical pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct HierarchicalPass {
    pub z: Vec<f64>,
    layout: SegmentLayout,
    blocks: Vec<BlockCache>,
    readout: ReadoutCache,
}

impl HierarchicalPass {
    pub fn layout(&self) -> SegmentLayout {
        self.layout
    }

    /// Head-averaged attention probabilities of `layer`.
    pub fn attention(&self, layer: usize) -> Option<Tensor2> {
        self.blocks.get(layer).map(BlockCache::mean_attention)
    }
}

/// Gradients of the hierarchical embedding with respect to its inputs.
#[derive(Clone, Debug)]
pub struct HierarchicalGrads {
    pub global: Vec<Tensor2>,
    pub high: Vec<Tensor2>,
    /// `dz/dM^l`, summed over heads; `None` for unmodified layers.
    pub modifiers: Vec<Option<Tensor2>>,
}

impl TextEncoder {
    pub fn random(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let token_embedding =
            Tensor2::random_normal(config.vocab_size, config.model_dim, 1.0, &mut rng);
        let backbone = Backbone::random(&config, &mut rng);
        Ok(Self {
            config,
            token_embedding,
            backbone,
        })
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.config.vocab_size)
    }

    pub fn embed_token(&self, id: usize) -> &[f64] {
        self.token_embedding.row(id)
    }

    fn embed_ids(&self, ids: &[usize]) -> Tensor2 {
        let mut x = Tensor2::zeros(ids.len(), self.config.model_dim);
        for (r, &id) in ids.iter().enumerate() {
            x.set_row(r, self.embed_token(id));
        }
        x
    }

    /// Plain frozen pass over the concrete tokens of `seq` (prompt slots are
    /// skipped). Returns the last-token state at each layer input together
    /// with the projected final embedding.
    pub fn encode_frozen(&self, seq: &TokenSequence) -> Result<(LayerStates, Vec<f64>)> {
        seq.validate(&self.config)?;
        let ids = seq.concrete_ids();
        let n = ids.len();
        let none = AttentionModMatrix::none(n);
        let mut x = self.embed_ids(&ids);
        let mut states = Vec::with_capacity(self.config.num_layers);
        for block in &self.backbone.layers {
            states.push(x.row(n - 1).to_vec());
            x = block.forward(&x, &none, self.config.num_heads).0;
        }
        let (z, _) = self.backbone.readout(x.row(n - 1));
        Ok((LayerStates { states }, z))
    }

    /// Hierarchical prompted pass returning `z = TextProj(x^N)`.
    pub fn hierarchical_forward(
        &self,
        seq: &TokenSequence,
        bundle: &PromptBundle,
        high_prompts: &[Tensor2],
        mods: &[AttentionModMatrix],
    ) -> Result<Vec<f64>> {
        Ok(self
            .hierarchical_pass(seq, &bundle.global_values(), high_prompts, mods, None)?
            .z)
    }

    /// Runs `[c, p_g, p_h, p_l]` through every layer. Global and high rows of
    /// each layer input are replaced by that layer's prompts, so outputs at
    /// those positions are discarded. `mods` is empty (no modification) or has
    /// one matrix per layer.
    pub fn hierarchical_pass(
        &self,
        seq: &TokenSequence,
        global_prompts: &[Tensor2],
        high_prompts: &[Tensor2],
        mods: &[AttentionModMatrix],
        hook: Option<LayerOutputHook<'_>>,
    ) -> Result<HierarchicalPass> {
        seq.validate(&self.config)?;
        let layout = seq.layout;
        let n_layers = self.config.num_layers;
        let d = self.config.model_dim;
        let n = layout.total();
        check_prompts("global", global_prompts, n_layers, layout.global_len, d)?;
        check_prompts("high", high_prompts, n_layers, layout.high_len, d)?;
        let none = AttentionModMatrix::none(n);
        let mods = resolve_mods(mods, n_layers, n, &none)?;

        let mut x = Tensor2::zeros(n, d);
        for (r, &id) in seq.class_ids().iter().enumerate() {
            x.set_row(layout.class_range().start + r, self.embed_token(id));
        }
        for (r, &id) in seq.low_ids().iter().enumerate() {
            x.set_row(layout.low_range().start + r, self.embed_token(id));
        }

        let mut blocks = Vec::with_capacity(n_layers);
        for (l, block) in self.backbone.layers.iter().enumerate() {
            if layout.global_len > 0 {
                x.set_rows(layout.global_range().start, &global_prompts[l]);
            }
            if layout.high_len > 0 {
                x.set_rows(layout.high_range().start, &high_prompts[l]);
            }
            let (mut y, cache) = block.forward(&x, mods[l], self.config.num_heads);
            if let Some(hook) = hook {
                hook(l, &mut y);
            }
            blocks.push(cache);
            x = y;
        }
        x.ensure_finite("hierarchical encoder state")?;
        let (z, readout) = self.backbone.readout(x.row(n - 1));
        Ok(HierarchicalPass {
            z,
            layout,
            blocks,
            readout,
        })
    }

    /// Backpropagates `dz` to the prompts and the modification matrices.
    pub fn hierarchical_backward(
        &self,
        pass: &HierarchicalPass,
        mods: &[AttentionModMatrix],
        dz: &[f64],
    ) -> Result<HierarchicalGrads> {
        let layout = pass.layout;
        let n = layout.total();
        let d = self.config.model_dim;
        let n_layers = self.config.num_layers;
        let none = AttentionModMatrix::none(n);
        let mods = resolve_mods(mods, n_layers, n, &none)?;

        let mut dy = Tensor2::zeros(n, d);
        dy.set_row(n - 1, &self.backbone.readout_backward(&pass.readout, dz));
        let mut global = vec![Tensor2::zeros(layout.global_len, d); n_layers];
        let mut high = vec![Tensor2::zeros(layout.high_len, d); n_layers];
        let mut modifiers = vec![None; n_layers];
        for l in (0..n_layers).rev() {
            let (mut dx, dm) = self.backbone.layers[l].backward(&pass.blocks[l], mods[l], &dy);
            let g = layout.global_range();
            let h = layout.high_range();
            global[l] = dx.slice_rows(g.start, g.end);
            high[l] = dx.slice_rows(h.start, h.end);
            for r in g.chain(h) {
                dx.row_mut(r).fill(0.0);
            }
            modifiers[l] = dm;
            dy = dx;
        }
        Ok(HierarchicalGrads {
            global,
            high,
            modifiers,
        })
    }

    /// Head-averaged attention row of `query` at `layer`.
    pub fn attention_row(
        &self,
        seq: &TokenSequence,
        bundle: &PromptBundle,
        high_prompts: &[Tensor2],
        mods: &[AttentionModMatrix],
        layer: usize,
        query: usize,
    ) -> Result<Vec<f64>> {
        if layer >= self.config.num_layers {
            return Err(HptError::InvalidArgument(format!(
                "layer {layer} out of range for {} layers",
                self.config.num_layers
            )));
        }
        if query >= seq.len() {
            return Err(HptError::InvalidArgument(format!(
                "query position {query} outside sequence of {}",
                seq.len()
            )));
        }
        let pass =
            self.hierarchical_pass(seq, &bundle.global_values(), high_prompts, mods, None)?;
        let attn = pass.attention(layer).expect("layer checked above");
        Ok(attn.row(query).to_vec())
    }

    /// Attention of the final token to each low-block word at `layer`,
    /// sorted by descending score and truncated to `top_k`.
    pub fn dump_attention_scores(
        &self,
        seq: &TokenSequence,
        bundle: &PromptBundle,
        high_prompts: &[Tensor2],
        mods: &[AttentionModMatrix],
        layer: usize,
        top_k: usize,
    ) -> Result<AttentionDump> {
        let row = self.attention_row(seq, bundle, high_prompts, mods, layer, seq.len() - 1)?;
        Ok(AttentionDump::from_row(seq, row, top_k))
    }
}

/// Final-token attention at one layer, folded onto the words of the low block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    /// Full attention row over every sequence position.
    pub row: Vec<f64>,
    /// `(word, score)` with multi-token words summed over their span.
    pub words: Vec<(String, f64)>,
}

impl AttentionDump {
    pub fn from_row(seq: &TokenSequence, row: Vec<f64>, top_k: usize) -> Self {
        let mut words: Vec<(String, f64)> = seq
            .word_spans
            .iter()
            .map(|s| (s.word.clone(), row[s.tokens.clone()].iter().sum()))
            .collect();
        words.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        words.truncate(top_k);
        Self { row, words }
    }
}

fn check_prompts(
    kind: &str,
    prompts: &[Tensor2],
    n_layers: usize,
    rows: usize,
    d: usize,
) -> Result<()> {
    if rows == 0 && prompts.iter().all(|p| p.rows() == 0) {
        return Ok(());
    }
    if prompts.len() != n_layers {
        return Err(HptError::Layout(format!(
            "{kind} prompts supplied for {} layers, encoder has {n_layers}",
            prompts.len()
        )));
    }
    if let Some(p) = prompts.iter().find(|p| p.shape() != (rows, d)) {
        return Err(HptError::Layout(format!(
            "{kind} prompts are {}x{}, layout expects {rows}x{d}",
            p.rows(),
            p.cols()
        )));
    }
    Ok(())
}

fn resolve_mods<'a>(
    mods: &'a [AttentionModMatrix],
    n_layers: usize,
    seq_len: usize,
    none: &'a AttentionModMatrix,
) -> Result<Vec<&'a AttentionModMatrix>> {
    if mods.is_empty() {
        return Ok(vec![none; n_layers]);
    }
    if mods.len() != n_layers {
        return Err(HptError::Layout(format!(
            "{} modification matrices for {n_layers} layers",
            mods.len()
        )));
    }
    for m in mods {
        m.validate(seq_len)?;
    }
    Ok(mods.iter().collect())
}

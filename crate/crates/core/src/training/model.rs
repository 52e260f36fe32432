use serde::{Deserialize, Serialize};

use super::config::{Granularity, Mode, ReweightStrategy, TrainConfig};
use super::losses::{
    asymmetric_loss_with_grads, consistency_grad, pair_probabilities, total_loss, LossBreakdown,
};
use crate::encoders::{
    apply_adapter, generate_high_prompts, stacked_states, AttentionModMatrix, EncoderConfig,
    HierarchicalPass, LayerStates, PromptBundle, TextEncoder, TokenSequence, VisualEncoder,
    VisualPass,
};
use crate::error::{HptError, Result};
use crate::knowledge::{instruction_hash, ClassKnowledge};
use crate::numerics::{cosine_similarity, normalize, Tensor2};
use crate::relgraph::{
    additive_from_indicators, align_words, build_reweight_matrix, build_selective_matrix,
    build_untyped_additive_matrix, typed_indicators, RelationGraph,
};

/// Frozen towers, learnable prompts and the configuration they were trained
/// with. This is what a checkpoint stores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HptModel {
    pub config: TrainConfig,
    pub text: TextEncoder,
    pub visual: VisualEncoder,
    pub bundle: PromptBundle,
}

impl HptModel {
    /// Random frozen text tower, a visual tower sharing its layers, and
    /// freshly initialised prompts.
    pub fn new(encoder: EncoderConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let text = TextEncoder::random(encoder)?;
        let visual = VisualEncoder::sharing_backbone(&text);
        let bundle = PromptBundle::new(&text.config, config.n_g, config.n_visual, config.seed);
        Ok(Self {
            config,
            text,
            visual,
            bundle,
        })
    }

    /// Digest of the frozen towers; training must leave it unchanged.
    pub fn frozen_checksum(&self) -> Result<String> {
        Ok(instruction_hash(&serde_json::to_string(&(
            &self.text,
            &self.visual,
        ))?))
    }

    pub fn towers(&self) -> Towers<'_> {
        Towers {
            text: &self.text,
            visual: &self.visual,
            config: &self.config,
        }
    }

    /// Frozen image embedding of one sample.
    pub fn frozen_image(&self, features: &Tensor2) -> Result<Vec<f64>> {
        self.visual.visual_forward(features, &[], true)
    }

    pub fn class_context(&self, knowledge: &ClassKnowledge) -> Result<ClassContext> {
        ClassContext::build(self.towers(), knowledge)
    }
}

/// Read-only view of everything except the learnable prompts.
#[derive(Clone, Copy)]
pub struct Towers<'a> {
    pub text: &'a TextEncoder,
    pub visual: &'a VisualEncoder,
    pub config: &'a TrainConfig,
}

#[derive(Clone, Debug)]
enum ModPlan {
    None,
    /// Typed indicators scaled by the learnable per-layer scalars.
    Learnable {
        e2e: Tensor2,
        e2a: Tensor2,
    },
    Fixed(AttentionModMatrix),
}

#[derive(Clone, Debug)]
pub struct DescriptionContext {
    pub text: String,
    pub seq: TokenSequence,
    /// Frozen embedding of the description on its own.
    pub frozen_emb: Vec<f64>,
    plan: ModPlan,
}

/// Everything about one class that does not depend on learnable parameters.
#[derive(Clone, Debug)]
pub struct ClassContext {
    pub name: String,
    pub descriptions: Vec<DescriptionContext>,
    frozen_states: Vec<LayerStates>,
    /// Normalized mean of the normalized frozen description embeddings.
    pub frozen_class_emb: Vec<f64>,
}

fn mod_plan(config: &TrainConfig, seq: &TokenSequence, graph: &RelationGraph) -> Result<ModPlan> {
    if !config.low_prompts {
        return Ok(ModPlan::None);
    }
    let layout = &seq.layout;
    Ok(match (config.reweight_strategy, config.mode) {
        (ReweightStrategy::None, _) => ModPlan::None,
        (ReweightStrategy::Additive, Mode::Hpt) => {
            let (e2e, e2a) = typed_indicators(graph, &align_words(seq, graph), layout);
            ModPlan::Learnable { e2e, e2a }
        }
        (strategy, _) => {
            let graph = graph.untyped_view();
            let alignment = align_words(seq, &graph);
            ModPlan::Fixed(match strategy {
                ReweightStrategy::Additive => {
                    build_untyped_additive_matrix(&graph, &alignment, config.beta, layout)?
                }
                ReweightStrategy::Multiplicative => {
                    build_reweight_matrix(&graph, &alignment, config.beta, layout)?
                }
                _ => build_selective_matrix(&graph, &alignment, config.beta, layout)?,
            })
        }
    })
}

impl ClassContext {
    pub fn build(towers: Towers<'_>, knowledge: &ClassKnowledge) -> Result<Self> {
        let config = towers.config;
        let n_h = config.n_h;
        let source = match config.granularity {
            Granularity::Coarse => &knowledge.coarse,
            Granularity::Overall => &knowledge.overall,
        };
        if source.len() < n_h || knowledge.relations.len() < n_h {
            return Err(HptError::Structural(format!(
                "class {:?} has {} descriptions and {} relation graphs, training needs {n_h}",
                knowledge.name,
                source.len(),
                knowledge.relations.len()
            )));
        }
        let tokenizer = towers.text.tokenizer();
        let n_high = if config.high_prompts { n_h } else { 0 };
        let mut descriptions = Vec::with_capacity(n_h);
        let mut frozen_states = Vec::with_capacity(n_h);
        let mut mean = vec![0.0; towers.text.config.model_dim];
        for (text, graph) in source.iter().zip(&knowledge.relations).take(n_h) {
            let (states, frozen) = towers
                .text
                .encode_frozen(&TokenSequence::description(&tokenizer, text))?;
            frozen_states.push(states);
            for (m, v) in mean.iter_mut().zip(normalize(&frozen)?) {
                *m += v;
            }
            let low_text = match (config.low_prompts, config.mode) {
                (false, _) => String::new(),
                (true, Mode::HptPlusPlus) => text.clone(),
                (true, Mode::Hpt) => graph.low_level_text(),
            };
            let seq =
                TokenSequence::build(&tokenizer, &knowledge.name, &low_text, config.n_g, n_high);
            seq.validate(&towers.text.config)?;
            let plan = mod_plan(config, &seq, graph)?;
            descriptions.push(DescriptionContext {
                text: text.clone(),
                seq,
                frozen_emb: frozen,
                plan,
            });
        }
        Ok(Self {
            name: knowledge.name.clone(),
            descriptions,
            frozen_states,
            frozen_class_emb: normalize(&mean)?,
        })
    }

    pub fn n_h(&self) -> usize {
        self.descriptions.len()
    }

    /// Per-layer modification matrices of description `index` under `bundle`.
    pub fn modifiers(&self, index: usize, bundle: &PromptBundle) -> Vec<AttentionModMatrix> {
        match &self.descriptions[index].plan {
            ModPlan::None => Vec::new(),
            ModPlan::Fixed(m) => vec![m.clone(); bundle.num_layers()],
            ModPlan::Learnable { e2e, e2a } => (0..bundle.num_layers())
                .map(|l| {
                    additive_from_indicators(e2e, e2a, bundle.lambda_e2e(l), bundle.lambda_e2a(l))
                })
                .collect(),
        }
    }

    pub fn high_prompts(&self, towers: Towers<'_>, bundle: &PromptBundle) -> Result<Vec<Tensor2>> {
        if towers.config.high_prompts {
            generate_high_prompts(&self.frozen_states, &bundle.generator)
        } else {
            Ok(Vec::new())
        }
    }
}

/// Forward state of one prompted class text.
pub struct TextForward {
    pass: HierarchicalPass,
    mods: Vec<AttentionModMatrix>,
    pub z: Vec<f64>,
    pub phi_z: Vec<f64>,
}

pub fn text_forward(
    towers: Towers<'_>,
    bundle: &PromptBundle,
    ctx: &ClassContext,
    index: usize,
) -> Result<TextForward> {
    let high = ctx.high_prompts(towers, bundle)?;
    let mods = ctx.modifiers(index, bundle);
    let pass = towers.text.hierarchical_pass(
        &ctx.descriptions[index].seq,
        &bundle.global_values(),
        &high,
        &mods,
        None,
    )?;
    let z = pass.z.clone();
    // HPT has no adapter; its classification embedding is `z` itself.
    let phi_z = match towers.config.mode {
        Mode::HptPlusPlus => apply_adapter(&z, &bundle.adapter)?,
        Mode::Hpt => z.clone(),
    };
    Ok(TextForward {
        pass,
        mods,
        z,
        phi_z,
    })
}

/// Accumulates `∂/∂bundle` of a loss whose gradient at `φ(z)` is `d_phi_z`.
pub fn text_backward(
    towers: Towers<'_>,
    bundle: &mut PromptBundle,
    ctx: &ClassContext,
    index: usize,
    fwd: &TextForward,
    d_phi_z: &[f64],
) -> Result<()> {
    let dz = match towers.config.mode {
        Mode::HptPlusPlus => bundle
            .adapter
            .backward(&Tensor2::row_vector(&fwd.z), &Tensor2::row_vector(d_phi_z)),
        Mode::Hpt => Tensor2::row_vector(d_phi_z),
    };
    let grads = towers
        .text
        .hierarchical_backward(&fwd.pass, &fwd.mods, dz.data())?;
    for (p, g) in bundle.global_prompts.iter_mut().zip(&grads.global) {
        p.accumulate(g);
    }
    if towers.config.high_prompts {
        let d = towers.text.config.model_dim;
        for (l, g) in grads.high.iter().enumerate() {
            let states = stacked_states(&ctx.frozen_states, l, d);
            bundle.generator.backward(&states, g);
        }
    }
    if let ModPlan::Learnable { e2e, e2a } = &ctx.descriptions[index].plan {
        let mut g = Tensor2::zeros(bundle.num_layers(), 2);
        for (l, dm) in grads.modifiers.iter().enumerate() {
            if let Some(dm) = dm {
                g.set(l, 0, dm.hadamard(e2e).sum());
                g.set(l, 1, dm.hadamard(e2a).sum());
            }
        }
        bundle.relation_scalars.accumulate(&g);
    }
    Ok(())
}

/// Mean of the normalized prompted embeddings of every description,
/// renormalized. Each description uses its own graph's matrices.
pub fn category_embedding_inference(
    towers: Towers<'_>,
    bundle: &PromptBundle,
    ctx: &ClassContext,
) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; towers.text.config.model_dim];
    for i in 0..ctx.n_h() {
        let e = normalize(&text_forward(towers, bundle, ctx, i)?.phi_z)?;
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    let n = ctx.n_h() as f64;
    normalize(&mean.into_iter().map(|m| m / n).collect::<Vec<_>>())
}

/// Class embeddings used at inference: prompted and frozen text per class.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub names: Vec<String>,
    pub prompted: Vec<Vec<f64>>,
    pub frozen: Vec<Vec<f64>>,
}

impl ClassifierHead {
    pub fn build(towers: Towers<'_>, bundle: &PromptBundle, ctxs: &[ClassContext]) -> Result<Self> {
        Ok(Self {
            names: ctxs.iter().map(|c| c.name.clone()).collect(),
            prompted: ctxs
                .iter()
                .map(|c| category_embedding_inference(towers, bundle, c))
                .collect::<Result<_>>()?,
            frozen: ctxs.iter().map(|c| c.frozen_class_emb.clone()).collect(),
        })
    }

    /// Overall (averaged) probability over the head's classes.
    pub fn probabilities(
        &self,
        towers: Towers<'_>,
        bundle: &PromptBundle,
        features: &Tensor2,
    ) -> Result<Vec<f64>> {
        let frozen_img = towers.visual.visual_forward(features, &[], true)?;
        let prompted_img =
            towers
                .visual
                .visual_forward(features, &bundle.visual_values(), false)?;
        Ok(pair_probabilities(
            &frozen_img,
            &prompted_img,
            &self.frozen,
            &self.prompted,
            towers.config.logit_scale,
        )?
        .2)
    }

    /// Index of the most probable class; ties go to the lower index.
    pub fn predict(
        &self,
        towers: Towers<'_>,
        bundle: &PromptBundle,
        features: &Tensor2,
    ) -> Result<usize> {
        let p = self.probabilities(towers, bundle, features)?;
        Ok(p.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
            .0)
    }
}

/// One optimisation step's inputs: images, labels into the class contexts,
/// cached frozen image embeddings and the description drawn for each class.
pub struct Batch<'a> {
    pub features: Vec<&'a Tensor2>,
    pub labels: Vec<usize>,
    pub frozen_img: Vec<Vec<f64>>,
    pub descriptions: Vec<usize>,
}

struct StepState {
    texts: Vec<TextForward>,
    images: Vec<VisualPass>,
    d_text: Vec<Vec<f64>>,
    d_img: Vec<Vec<f64>>,
    breakdown: LossBreakdown,
}

fn step_forward(
    towers: Towers<'_>,
    bundle: &PromptBundle,
    ctxs: &[ClassContext],
    batch: &Batch<'_>,
) -> Result<StepState> {
    let config = towers.config;
    if batch.descriptions.len() != ctxs.len() {
        return Err(HptError::Shape(format!(
            "{} description indices for {} classes",
            batch.descriptions.len(),
            ctxs.len()
        )));
    }
    let texts = ctxs
        .iter()
        .zip(&batch.descriptions)
        .map(|(c, &i)| text_forward(towers, bundle, c, i))
        .collect::<Result<Vec<_>>>()?;
    let visual_prompts = bundle.visual_values();
    let images = batch
        .features
        .iter()
        .map(|f| towers.visual.forward(f, Some(&visual_prompts)))
        .collect::<Result<Vec<_>>>()?;
    let prompted_txt: Vec<Vec<f64>> = texts.iter().map(|t| t.phi_z.clone()).collect();
    let prompted_img: Vec<Vec<f64>> = images.iter().map(|p| p.embedding.clone()).collect();
    let frozen_txt: Vec<Vec<f64>> = ctxs.iter().map(|c| c.frozen_class_emb.clone()).collect();
    let asym = asymmetric_loss_with_grads(
        &batch.frozen_img,
        &prompted_img,
        &frozen_txt,
        &prompted_txt,
        &batch.labels,
        config.logit_scale,
        config.ce_weights,
    )?;

    let k = ctxs.len() as f64;
    let mut l_c = 0.0;
    let mut d_text = asym.d_prompted_txt;
    for ((t, c), (&i, d)) in texts
        .iter()
        .zip(ctxs)
        .zip(batch.descriptions.iter().zip(&mut d_text))
    {
        let target = &c.descriptions[i].frozen_emb;
        l_c += 1.0 - cosine_similarity(&t.phi_z, target)?;
        if config.lambda != 0.0 {
            for (acc, g) in d
                .iter_mut()
                .zip(consistency_grad(&t.phi_z, target, config.lambda / k))
            {
                *acc += g;
            }
        }
    }
    l_c /= k;
    let breakdown = LossBreakdown {
        l_asy: asym.loss,
        l_c,
        total: total_loss(asym.loss, l_c, config.lambda),
        ce: asym.ce,
    };
    Ok(StepState {
        texts,
        images,
        d_text,
        d_img: asym.d_prompted_img,
        breakdown,
    })
}

/// Total loss of one step without touching gradients.
pub fn step_loss(
    towers: Towers<'_>,
    bundle: &PromptBundle,
    ctxs: &[ClassContext],
    batch: &Batch<'_>,
) -> Result<LossBreakdown> {
    Ok(step_forward(towers, bundle, ctxs, batch)?.breakdown)
}

/// Total loss of one step; its gradient is accumulated into `bundle`.
pub fn step_gradients(
    towers: Towers<'_>,
    bundle: &mut PromptBundle,
    ctxs: &[ClassContext],
    batch: &Batch<'_>,
) -> Result<LossBreakdown> {
    let state = step_forward(towers, bundle, ctxs, batch)?;
    for (k, (fwd, d)) in state.texts.iter().zip(&state.d_text).enumerate() {
        text_backward(towers, bundle, &ctxs[k], batch.descriptions[k], fwd, d)?;
    }
    for (pass, d) in state.images.iter().zip(&state.d_img) {
        for (p, g) in bundle
            .visual_prompts
            .iter_mut()
            .zip(towers.visual.backward(pass, d))
        {
            p.accumulate(&g);
        }
    }
    Ok(state.breakdown)
}

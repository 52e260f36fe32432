use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{step_gradients, Batch, ClassContext, HptModel, Towers};
use crate::error::{HptError, Result};
use crate::knowledge::DescriptionCorpus;
use crate::numerics::{sgd_step, ParameterSet, Tensor2};
use crate::relgraph::RelationGraph;

/// One image with the index of its class in the training class list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Tensor2,
    pub label: usize,
}

/// One line of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub l_asy: f64,
    pub l_c: f64,
    pub total: f64,
}

pub fn trace_to_jsonl(trace: &[LossRecord]) -> String {
    trace
        .iter()
        .map(|r| serde_json::to_string(r).expect("plain numeric record") + "\n")
        .collect()
}

/// Uniformly draws one of the class's `(overall description, graph)` pairs.
pub fn sample_description<'a, R: Rng + ?Sized>(
    rng: &mut R,
    corpus: &'a DescriptionCorpus,
    class: &str,
) -> Result<(&'a str, &'a RelationGraph)> {
    if corpus.classes.is_empty() {
        return Err(HptError::Structural("corpus has no classes".into()));
    }
    let entry = corpus.class(class)?;
    let n = entry.overall.len().min(entry.relations.len());
    if n == 0 {
        return Err(HptError::Structural(format!(
            "class {class:?} has no descriptions"
        )));
    }
    let i = rng.random_range(0..n);
    Ok((&entry.overall[i], &entry.relations[i]))
}

/// Runs `epochs` passes of shuffled mini-batches over `samples`, updating
/// only the prompt bundle. Each batch draws one description per class.
pub fn train(
    model: &mut HptModel,
    corpus: &DescriptionCorpus,
    classes: &[String],
    samples: &[LabeledSample],
) -> Result<Vec<LossRecord>> {
    let HptModel {
        config,
        text,
        visual,
        bundle,
    } = model;
    config.validate()?;
    let towers = Towers {
        text,
        visual,
        config,
    };
    let ctxs = classes
        .iter()
        .map(|c| ClassContext::build(towers, corpus.class(c)?))
        .collect::<Result<Vec<_>>>()?;
    train_with_contexts(towers, bundle, &ctxs, samples)
}

pub fn train_with_contexts(
    towers: Towers<'_>,
    bundle: &mut crate::encoders::PromptBundle,
    ctxs: &[ClassContext],
    samples: &[LabeledSample],
) -> Result<Vec<LossRecord>> {
    let config = towers.config;
    if let Some(s) = samples.iter().find(|s| s.label >= ctxs.len()) {
        return Err(HptError::InvalidArgument(format!(
            "sample label {} outside {} training classes",
            s.label,
            ctxs.len()
        )));
    }
    let frozen_img = samples
        .iter()
        .map(|s| towers.visual.visual_forward(&s.features, &[], true))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::new();
    bundle.zero_grads();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = Batch {
                features: chunk.iter().map(|&i| &samples[i].features).collect(),
                labels: chunk.iter().map(|&i| samples[i].label).collect(),
                frozen_img: chunk.iter().map(|&i| frozen_img[i].clone()).collect(),
                descriptions: ctxs.iter().map(|c| rng.random_range(0..c.n_h())).collect(),
            };
            let step = trace.len();
            let loss = match step_gradients(towers, bundle, ctxs, &batch) {
                Ok(loss) => loss,
                Err(HptError::NonFinite(_)) => {
                    return Err(HptError::Divergence {
                        step,
                        trace: trace_to_jsonl(&trace),
                    })
                }
                Err(e) => return Err(e),
            };
            let record = LossRecord {
                step,
                l_asy: loss.l_asy,
                l_c: loss.l_c,
                total: loss.total,
            };
            trace.push(record);
            if !loss.total.is_finite() {
                return Err(HptError::Divergence {
                    step,
                    trace: trace_to_jsonl(&trace),
                });
            }
            sgd_step(bundle, config.lr).map_err(|_| HptError::Divergence {
                step,
                trace: trace_to_jsonl(&trace),
            })?;
        }
    }
    Ok(trace)
}

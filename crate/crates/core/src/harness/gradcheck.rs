use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::knowledge::synthetic_corpus;
use super::protocols::class_contexts;
use super::world::{DatasetSpec, SyntheticDataset};
use crate::encoders::EncoderConfig;
use crate::error::Result;
use crate::knowledge::KnowledgeConfig;
use crate::numerics::{finite_diff_grad, max_relative_error, ParameterSet, Tensor2};
use crate::training::{
    step_gradients, step_loss, Batch, HptModel, Mode, ReweightStrategy, TrainConfig,
};

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-4;
/// Largest accepted relative error.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradient magnitude below which errors are measured absolutely.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientGroup {
    pub name: String,
    pub entries: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GradientGroup>,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "finite differences (h = {:e}, tolerance {:e})\n",
            self.step, self.tolerance
        );
        for g in &self.groups {
            out += &format!(
                "{:<24} {:>5} entries  max rel err {:.3e}  {}\n",
                g.name,
                g.entries,
                g.max_relative_error,
                if g.passed { "ok" } else { "FAIL" }
            );
        }
        out
    }
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        model_dim: 8,
        num_heads: 2,
        head_dim: 4,
        max_seq_len: 40,
        vocab_size: 97,
        seed: 3,
    }
}

fn group_of(index: usize, n_layers: usize) -> &'static str {
    match index {
        i if i < n_layers => "global prompts",
        i if i < n_layers + 2 => "generator f",
        i if i < n_layers + 4 => "adapter phi",
        i if i == n_layers + 4 => "relation scalars",
        _ => "visual prompts",
    }
}

/// Moves every learnable tensor away from its initial value so that no
/// gradient path is trivially zero.
fn perturb(model: &mut HptModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = &mut model.bundle;
    for i in 0..b.param_count() {
        let p = b.param_mut(i);
        let (r, c) = p.value.shape();
        let noise = Tensor2::random_normal(r, c, 0.3, &mut rng);
        p.value = p.value.add(&noise);
    }
}

/// Compares analytic and central-difference gradients of the total loss for
/// every parameter group, under an HPT++ and an HPT configuration.
pub fn gradient_suite() -> Result<GradientReport> {
    let encoder = tiny_encoder();
    let mut spec = DatasetSpec::new("grad", 2, 5);
    spec.family_size = 1;
    spec.train_per_class = 2;
    spec.test_per_class = 1;

    let hpp = TrainConfig {
        n_h: 2,
        lambda: 1.0,
        ..TrainConfig::default()
    };
    let hpt = TrainConfig {
        n_h: 2,
        mode: Mode::Hpt,
        reweight_strategy: ReweightStrategy::Additive,
        lambda: 0.5,
        ..TrainConfig::default()
    };

    let mut worst: Vec<(String, usize, f64)> = Vec::new();
    for (k, config) in [hpp, hpt].into_iter().enumerate() {
        let mut model = HptModel::new(encoder.clone(), config)?;
        let dataset = SyntheticDataset::generate(spec.clone(), &model.text)?;
        let corpus = synthetic_corpus(
            &dataset,
            &model.text,
            &KnowledgeConfig {
                n_h: 2,
                workers: 1,
                ..KnowledgeConfig::default()
            },
        )?;
        perturb(&mut model, 100 + k as u64);
        let ctxs = class_contexts(&model, &corpus, &dataset.class_names())?;
        let features: Vec<&Tensor2> = dataset.train.iter().map(|pool| &pool[0]).collect();
        let frozen_img = features
            .iter()
            .map(|f| model.frozen_image(f))
            .collect::<Result<Vec<_>>>()?;
        let batch = Batch {
            features,
            labels: vec![0, 1],
            frozen_img,
            descriptions: vec![1, 0],
        };

        let HptModel {
            config,
            text,
            visual,
            bundle,
        } = &mut model;
        let towers = crate::training::Towers {
            text,
            visual,
            config,
        };
        bundle.zero_grads();
        step_gradients(towers, bundle, &ctxs, &batch)?;
        let analytic = bundle.grads();
        let numeric = finite_diff_grad(bundle, FD_STEP, |b| {
            Ok(step_loss(towers, b, &ctxs, &batch)?.total)
        })?;
        let n_layers = bundle.num_layers();
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let name = group_of(i, n_layers);
            let err = max_relative_error(a, n, FD_FLOOR);
            match worst.iter_mut().find(|(g, _, _)| g == name) {
                Some(entry) => {
                    entry.1 += a.len();
                    entry.2 = entry.2.max(err);
                }
                None => worst.push((name.to_string(), a.len(), err)),
            }
        }
    }
    Ok(GradientReport {
        step: FD_STEP,
        tolerance: FD_TOLERANCE,
        groups: worst
            .into_iter()
            .map(|(name, entries, err)| GradientGroup {
                name,
                entries,
                max_relative_error: err,
                passed: err < FD_TOLERANCE,
            })
            .collect(),
    })
}

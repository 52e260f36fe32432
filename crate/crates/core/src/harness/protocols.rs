use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{DomainShift, SyntheticDataset};
use crate::error::{HptError, Result};
use crate::knowledge::DescriptionCorpus;
use crate::numerics::{ParameterSet, Tensor2};
use crate::training::{
    train_with_contexts, ClassContext, ClassifierHead, HptModel, LabeledSample, LossRecord,
    TrainConfig,
};

pub const DEFAULT_SHOTS: usize = 16;

/// `2bn / (b + n)`.
pub fn harmonic_mean(b: f64, n: f64) -> Result<f64> {
    if !(b > 0.0) || !(n > 0.0) {
        return Err(HptError::InvalidArgument(format!(
            "harmonic mean needs positive inputs, got ({b}, {n})"
        )));
    }
    Ok(2.0 * b * n / (b + n))
}

/// Harmonic mean that reads a zero accuracy as a zero mean.
fn report_hm(b: f64, n: f64) -> f64 {
    harmonic_mean(b, n).unwrap_or(0.0)
}

/// Base/new partition and the few-shot training indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub base_classes: Vec<usize>,
    pub new_classes: Vec<usize>,
    pub shots_per_class: usize,
    /// For each base class, indices into its training pool.
    pub shots: Vec<Vec<usize>>,
}

/// First `⌈N_c/2⌉` classes are base, the rest new; shots are drawn without
/// replacement from each base class's pool.
pub fn make_splits(dataset: &SyntheticDataset, seed: u64, shots: usize) -> Result<SplitSpec> {
    let n = dataset.num_classes();
    if n < 2 {
        return Err(HptError::InvalidArgument(format!(
            "base/new split needs at least 2 classes, got {n}"
        )));
    }
    let n_base = n.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::with_capacity(n_base);
    for c in 0..n_base {
        let pool = dataset.train[c].len();
        if shots == 0 || shots > pool {
            return Err(HptError::InvalidArgument(format!(
                "{shots} shots requested, class {c} has {pool} training samples"
            )));
        }
        let mut idx = sample(&mut rng, pool, shots).into_vec();
        idx.sort_unstable();
        picks.push(idx);
    }
    Ok(SplitSpec {
        base_classes: (0..n_base).collect(),
        new_classes: (n_base..n).collect(),
        shots_per_class: shots,
        shots: picks,
    })
}

/// Few-shot samples of the base classes, labelled by base-class position.
pub fn training_samples(dataset: &SyntheticDataset, split: &SplitSpec) -> Vec<LabeledSample> {
    split
        .base_classes
        .iter()
        .zip(&split.shots)
        .enumerate()
        .flat_map(|(label, (&c, idx))| {
            idx.iter().map(move |&j| LabeledSample {
                features: dataset.train[c][j].clone(),
                label,
            })
        })
        .collect()
}

pub fn class_contexts(
    model: &HptModel,
    corpus: &DescriptionCorpus,
    names: &[String],
) -> Result<Vec<ClassContext>> {
    names
        .iter()
        .map(|n| model.class_context(corpus.class(n)?))
        .collect()
}

/// Trains `model` on the few-shot base split. The trace is returned.
pub fn train_base(
    model: &mut HptModel,
    corpus: &DescriptionCorpus,
    dataset: &SyntheticDataset,
    split: &SplitSpec,
) -> Result<Vec<LossRecord>> {
    let names: Vec<String> = split
        .base_classes
        .iter()
        .map(|&c| dataset.classes[c].name.clone())
        .collect();
    train_classes(model, corpus, &names, &training_samples(dataset, split))
}

/// Trains on every class with the first `shots` pool samples of each.
pub fn train_all_classes(
    model: &mut HptModel,
    corpus: &DescriptionCorpus,
    dataset: &SyntheticDataset,
    shots: usize,
) -> Result<Vec<LossRecord>> {
    let samples: Vec<LabeledSample> = dataset
        .train
        .iter()
        .enumerate()
        .flat_map(|(label, pool)| {
            pool.iter().take(shots).map(move |f| LabeledSample {
                features: f.clone(),
                label,
            })
        })
        .collect();
    train_classes(model, corpus, &dataset.class_names(), &samples)
}

fn train_classes(
    model: &mut HptModel,
    corpus: &DescriptionCorpus,
    names: &[String],
    samples: &[LabeledSample],
) -> Result<Vec<LossRecord>> {
    let ctxs = class_contexts(model, corpus, names)?;
    let HptModel {
        config,
        text,
        visual,
        bundle,
    } = model;
    let towers = crate::training::Towers {
        text,
        visual,
        config,
    };
    train_with_contexts(towers, bundle, &ctxs, samples)
}

/// Fraction of test samples of `classes` classified correctly among
/// exactly those classes.
pub fn accuracy(
    model: &HptModel,
    corpus: &DescriptionCorpus,
    dataset: &SyntheticDataset,
    classes: &[usize],
) -> Result<f64> {
    let names: Vec<String> = classes
        .iter()
        .map(|&c| dataset.classes[c].name.clone())
        .collect();
    let ctxs = class_contexts(model, corpus, &names)?;
    let head = ClassifierHead::build(model.towers(), &model.bundle, &ctxs)?;
    accuracy_with_head(model, &head, dataset, classes)
}

fn accuracy_with_head(
    model: &HptModel,
    head: &ClassifierHead,
    dataset: &SyntheticDataset,
    classes: &[usize],
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (label, &c) in classes.iter().enumerate() {
        for x in &dataset.test[c] {
            if head.predict(model.towers(), &model.bundle, x)? == label {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(HptError::InvalidArgument(
            "no test samples to evaluate".into(),
        ));
    }
    Ok(correct as f64 / total as f64)
}

/// One table row. Accuracies are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub new: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl MetricRow {
    pub fn base_new(label: &str, base: f64, new: f64) -> Self {
        Self {
            label: label.into(),
            base: Some(base),
            new: Some(new),
            hm: Some(report_hm(base, new)),
            accuracy: None,
        }
    }

    pub fn single(label: &str, accuracy: f64) -> Self {
        Self {
            label: label.into(),
            base: None,
            new: None,
            hm: None,
            accuracy: Some(accuracy),
        }
    }

    pub fn accuracies(&self) -> impl Iterator<Item = f64> + '_ {
        [self.base, self.new, self.hm, self.accuracy]
            .into_iter()
            .flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: String,
    pub dataset: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Fixed-width table with percentages to two decimals.
    pub fn to_table(&self) -> String {
        format_table(
            &format!("{} on {}", self.protocol, self.dataset),
            &self.rows,
        )
    }
}

pub(crate) fn format_table(title: &str, rows: &[MetricRow]) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{title}\n{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "", "Base", "New", "HM", "Acc"
    );
    for r in rows {
        out += &format!(
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}\n",
            r.label,
            pct(r.base),
            pct(r.new),
            pct(r.hm),
            pct(r.accuracy)
        );
    }
    out
}

/// Base and new accuracy, each among its own classes, plus their harmonic mean.
pub fn evaluate(
    model: &HptModel,
    corpus: &DescriptionCorpus,
    dataset: &SyntheticDataset,
    split: &SplitSpec,
) -> Result<MetricsReport> {
    let checksum = model.bundle.checksum();
    let base = accuracy(model, corpus, dataset, &split.base_classes)?;
    let new = if split.new_classes.is_empty() {
        0.0
    } else {
        accuracy(model, corpus, dataset, &split.new_classes)?
    };
    debug_assert_eq!(checksum, model.bundle.checksum());
    Ok(MetricsReport {
        protocol: "base2new".into(),
        dataset: dataset.spec.name.clone(),
        seed: model.config.seed,
        config: model.config.clone(),
        rows: vec![MetricRow::base_new(&dataset.spec.name, base, new)],
    })
}

/// Accuracy over all classes of each target, with no parameter update.
pub fn cross_dataset_eval(
    model: &HptModel,
    source: &str,
    targets: &[(&SyntheticDataset, &DescriptionCorpus)],
) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(targets.len() + 1);
    for (dataset, corpus) in targets {
        let all: Vec<usize> = (0..dataset.num_classes()).collect();
        rows.push(MetricRow::single(
            &dataset.spec.name,
            accuracy(model, corpus, dataset, &all)?,
        ));
    }
    if !rows.is_empty() {
        let mean = rows.iter().filter_map(|r| r.accuracy).sum::<f64>() / rows.len() as f64;
        rows.push(MetricRow::single("average", mean));
    }
    Ok(MetricsReport {
        protocol: "crossdata".into(),
        dataset: source.into(),
        seed: model.config.seed,
        config: model.config.clone(),
        rows,
    })
}

/// Accuracy on the source test set and on each perturbed variant, using
/// one set of class embeddings throughout.
pub fn domain_gen_eval(
    model: &HptModel,
    corpus: &DescriptionCorpus,
    source: &SyntheticDataset,
    variants: &[(&str, &SyntheticDataset)],
) -> Result<MetricsReport> {
    let all: Vec<usize> = (0..source.num_classes()).collect();
    let ctxs = class_contexts(model, corpus, &source.class_names())?;
    let head = ClassifierHead::build(model.towers(), &model.bundle, &ctxs)?;
    let mut rows = vec![MetricRow::single(
        &source.spec.name,
        accuracy_with_head(model, &head, source, &all)?,
    )];
    for (label, variant) in variants {
        if variant.class_names() != source.class_names() {
            return Err(HptError::InvalidArgument(format!(
                "variant {label:?} does not share the source class set"
            )));
        }
        rows.push(MetricRow::single(
            label,
            accuracy_with_head(model, &head, variant, &all)?,
        ));
    }
    Ok(MetricsReport {
        protocol: "domaingen".into(),
        dataset: source.spec.name.clone(),
        seed: model.config.seed,
        config: model.config.clone(),
        rows,
    })
}

/// The perturbations used by the domain-generalization protocol.
pub fn default_shifts() -> Vec<(String, DomainShift)> {
    [(0.25, 0.0), (0.5, 0.1), (1.0, 0.2)]
        .iter()
        .map(|&(noise_scale, channel_drop)| {
            (
                format!("noise{noise_scale}-drop{channel_drop}"),
                DomainShift {
                    noise_scale,
                    channel_drop,
                },
            )
        })
        .collect()
}

/// Parameter values only; used to assert evaluation leaves them alone.
pub fn bundle_values(model: &HptModel) -> Vec<Tensor2> {
    (0..model.bundle.param_count())
        .map(|i| model.bundle.param(i).value.clone())
        .collect()
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::protocols::{evaluate, format_table, train_base, MetricRow, SplitSpec};
use super::world::SyntheticDataset;
use crate::encoders::EncoderConfig;
use crate::error::{HptError, Result};
use crate::knowledge::DescriptionCorpus;
use crate::training::{Granularity, HptModel, Mode, ReweightStrategy, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    /// Global, high and low prompt combinations.
    PromptLevels,
    /// Number of descriptions per class.
    NhSweep,
    /// Re-weighting strategy × intensity.
    StrategySweep,
    /// Incremental additions on top of HPT.
    HptppComponents,
}

impl FromStr for AblationSuite {
    type Err = HptError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prompt_levels" => Ok(Self::PromptLevels),
            "n_h_sweep" => Ok(Self::NhSweep),
            "strategy_sweep" => Ok(Self::StrategySweep),
            "hptpp_components" => Ok(Self::HptppComponents),
            other => Err(HptError::InvalidArgument(format!(
                "unknown ablation suite {other:?} (expected prompt_levels, n_h_sweep, strategy_sweep or hptpp_components)"
            ))),
        }
    }
}

impl fmt::Display for AblationSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PromptLevels => "prompt_levels",
            Self::NhSweep => "n_h_sweep",
            Self::StrategySweep => "strategy_sweep",
            Self::HptppComponents => "hptpp_components",
        })
    }
}

impl AblationSuite {
    /// Configuration the suite's rows are derived from when none is given:
    /// HPT for the prompt-level study, HPT++ defaults otherwise.
    pub fn default_config(self) -> TrainConfig {
        match self {
            Self::PromptLevels => TrainConfig::hpt(),
            _ => TrainConfig::default(),
        }
    }

    /// `(label, config)` for every row, derived from `base`.
    pub fn variants(self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        let with = |f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Self::PromptLevels => [
                ("G", false, false),
                ("G+H", true, false),
                ("G+L", false, true),
                ("G+H+L", true, true),
            ]
            .iter()
            .map(|&(label, high, low)| {
                (
                    label.to_string(),
                    with(&|c| {
                        c.high_prompts = high;
                        c.low_prompts = low;
                    }),
                )
            })
            .collect(),
            Self::NhSweep => [1, 3, 5]
                .iter()
                .map(|&n| (format!("N_h={n}"), with(&|c| c.n_h = n)))
                .collect(),
            Self::StrategySweep => {
                let mut rows = Vec::new();
                for strategy in [
                    ReweightStrategy::Additive,
                    ReweightStrategy::Multiplicative,
                    ReweightStrategy::MultiplicativeSelective,
                ] {
                    for beta in [0.0, 0.1, 0.2, 0.5, 1.0] {
                        rows.push((
                            format!("{strategy} beta={beta}"),
                            with(&|c| {
                                c.mode = Mode::HptPlusPlus;
                                c.reweight_strategy = strategy;
                                c.beta = beta;
                            }),
                        ));
                    }
                }
                rows
            }
            Self::HptppComponents => {
                let hpt = with(&|c| {
                    c.mode = Mode::Hpt;
                    c.reweight_strategy = ReweightStrategy::Additive;
                    c.lambda = 0.0;
                    c.granularity = Granularity::Coarse;
                });
                let mut multi = hpt.clone();
                multi.granularity = Granularity::Overall;
                let mut reweight = multi.clone();
                reweight.mode = Mode::HptPlusPlus;
                reweight.reweight_strategy = ReweightStrategy::Multiplicative;
                let mut consistency = reweight.clone();
                consistency.lambda = if base.lambda > 0.0 { base.lambda } else { 1.0 };
                vec![
                    ("HPT".into(), hpt),
                    ("+multi-granularity".into(), multi),
                    ("+reweighting".into(), reweight),
                    ("+consistency".into(), consistency),
                ]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub metrics: MetricRow,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: AblationSuite,
    pub dataset: String,
    pub base_config: TrainConfig,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<MetricRow> = self.rows.iter().map(|r| r.metrics.clone()).collect();
        format_table(&format!("{} on {}", self.suite, self.dataset), &rows)
    }
}

/// Trains and evaluates every configuration of `suite` from the same seed,
/// one after another.
pub fn run_ablation(
    suite: AblationSuite,
    base: &TrainConfig,
    encoder: &EncoderConfig,
    corpus: &DescriptionCorpus,
    dataset: &SyntheticDataset,
    split: &SplitSpec,
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for (label, config) in suite.variants(base) {
        let mut model = HptModel::new(encoder.clone(), config.clone())?;
        train_base(&mut model, corpus, dataset, split)?;
        let report = evaluate(&model, corpus, dataset, split)?;
        let mut metrics = report.rows[0].clone();
        metrics.label = label;
        rows.push(AblationRow { metrics, config });
    }
    Ok(AblationReport {
        suite,
        dataset: dataset.spec.name.clone(),
        base_config: base.clone(),
        rows,
    })
}

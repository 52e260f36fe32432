use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HptError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Low block holds entity and attribute words; typed pairs bias attention.
    #[serde(rename = "hpt")]
    Hpt,
    /// Low block holds the description; triples re-weight attention.
    #[serde(rename = "hpt++")]
    HptPlusPlus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReweightStrategy {
    None,
    /// Learnable per-layer `λ_e2e`/`λ_e2a` in HPT mode, fixed `β` bias otherwise.
    Additive,
    Multiplicative,
    MultiplicativeSelective,
}

/// Which description set feeds the prompts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Coarse,
    Overall,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($text:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = HptError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(HptError::Config(format!(
                        concat!("unknown ", $what, " {:?} (expected one of: {})"),
                        other,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($text); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(Mode, "mode", "hpt" => Mode::Hpt, "hpt++" => Mode::HptPlusPlus);
keyword_enum!(
    ReweightStrategy,
    "reweight strategy",
    "none" => ReweightStrategy::None,
    "additive" => ReweightStrategy::Additive,
    "multiplicative" => ReweightStrategy::Multiplicative,
    "multiplicative_selective" => ReweightStrategy::MultiplicativeSelective,
);
keyword_enum!(
    Granularity,
    "granularity",
    "coarse" => Granularity::Coarse,
    "overall" => Granularity::Overall,
);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub n_g: usize,
    pub n_h: usize,
    pub beta: f64,
    /// Weight of the consistency loss.
    pub lambda: f64,
    pub logit_scale: f64,
    pub seed: u64,
    pub mode: Mode,
    pub reweight_strategy: ReweightStrategy,
    pub n_visual: usize,
    pub high_prompts: bool,
    pub low_prompts: bool,
    pub granularity: Granularity,
    /// Weights of the frozen-image, frozen-text and averaged cross-entropies.
    pub ce_weights: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0025,
            batch_size: 8,
            epochs: 5,
            n_g: 2,
            n_h: 5,
            beta: 0.2,
            lambda: 1.0,
            logit_scale: 20.0,
            seed: 0,
            mode: Mode::HptPlusPlus,
            reweight_strategy: ReweightStrategy::Multiplicative,
            n_visual: 2,
            high_prompts: true,
            low_prompts: true,
            granularity: Granularity::Overall,
            ce_weights: [1.0, 1.0, 1.0],
        }
    }
}

const KEYS: [&str; 16] = [
    "lr",
    "batch_size",
    "epochs",
    "n_g",
    "n_h",
    "beta",
    "lambda",
    "logit_scale",
    "seed",
    "mode",
    "reweight_strategy",
    "n_visual",
    "high_prompts",
    "low_prompts",
    "granularity",
    "ce_weights",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HptError::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    /// HPT: typed pairs with learnable additive bias and no consistency loss.
    pub fn hpt() -> Self {
        Self {
            mode: Mode::Hpt,
            reweight_strategy: ReweightStrategy::Additive,
            lambda: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HptError::Config(m.to_string()));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.n_g == 0 || self.n_h == 0 {
            return bad("batch_size, n_g and n_h must be positive");
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad("beta must be non-negative");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be non-negative");
        }
        if !(self.logit_scale > 0.0) || !self.logit_scale.is_finite() {
            return bad("logit_scale must be positive");
        }
        if self
            .ce_weights
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
            || self.ce_weights.iter().all(|w| *w == 0.0)
        {
            return bad("ce_weights must be non-negative and not all zero");
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "n_g" => self.n_g = parse_value(key, value)?,
            "n_h" => self.n_h = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "logit_scale" => self.logit_scale = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "mode" => self.mode = value.parse()?,
            "reweight_strategy" => self.reweight_strategy = value.parse()?,
            "n_visual" => self.n_visual = parse_value(key, value)?,
            "high_prompts" => self.high_prompts = parse_value(key, value)?,
            "low_prompts" => self.low_prompts = parse_value(key, value)?,
            "granularity" => self.granularity = value.parse()?,
            "ce_weights" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| parse_value(key, p.trim()))
                    .collect::<Result<_>>()?;
                self.ce_weights = parts
                    .try_into()
                    .map_err(|_| HptError::Config("ce_weights needs three values".into()))?;
            }
            other => {
                return Err(HptError::Config(format!(
                    "unknown key {other:?} (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Flat `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HptError::Config(format!("line {}: expected key = value", n + 1)))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| HptError::Config(format!("line {}: {e}", n + 1)))?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Inverse of [`TrainConfig::parse`].
    pub fn to_config_text(&self) -> String {
        let [w1, w2, w3] = self.ce_weights;
        format!(
            "lr = {}\nbatch_size = {}\nepochs = {}\nn_g = {}\nn_h = {}\nbeta = {}\nlambda = {}\n\
             logit_scale = {}\nseed = {}\nmode = {}\nreweight_strategy = {}\nn_visual = {}\n\
             high_prompts = {}\nlow_prompts = {}\ngranularity = {}\nce_weights = {w1},{w2},{w3}\n",
            self.lr,
            self.batch_size,
            self.epochs,
            self.n_g,
            self.n_h,
            self.beta,
            self.lambda,
            self.logit_scale,
            self.seed,
            self.mode,
            self.reweight_strategy,
            self.n_visual,
            self.high_prompts,
            self.low_prompts,
            self.granularity,
        )
    }
}

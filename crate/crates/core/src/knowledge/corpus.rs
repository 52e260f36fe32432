use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{TextEncoder, TokenSequence, Tokenizer};
use crate::error::{HptError, Result};
use crate::numerics::{cosine_similarity, normalize};
use crate::relgraph::{align_words, RelationGraph, Triple};

/// Generated knowledge for one category.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassKnowledge {
    pub name: String,
    pub class_token: String,
    pub type_token: String,
    pub coarse: Vec<String>,
    pub fine: Vec<String>,
    pub overall: Vec<String>,
    /// `relations[i]` is extracted from `overall[i]`.
    pub relations: Vec<RelationGraph>,
    pub closest: Vec<String>,
}

/// All generated knowledge of one dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionCorpus {
    pub dataset: String,
    pub n_h: usize,
    pub classes: Vec<ClassKnowledge>,
}

impl DescriptionCorpus {
    pub fn class(&self, name: &str) -> Result<&ClassKnowledge> {
        self.classes
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| HptError::MissingClass(name.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Graph words of one overall description that found no token match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentWarning {
    pub class: String,
    pub index: usize,
    pub miss_ratio: f64,
    pub missing: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub warnings: Vec<AlignmentWarning>,
}

/// Structural checks (errors) and alignment coverage (warnings). The corpus
/// is never modified.
pub fn validate_corpus(
    corpus: &DescriptionCorpus,
    tokenizer: &Tokenizer,
) -> Result<ValidationReport> {
    let n_h = corpus.n_h;
    if n_h == 0 {
        return Err(HptError::Structural("n_h is zero".into()));
    }
    if corpus.classes.is_empty() {
        return Err(HptError::Structural("corpus has no classes".into()));
    }
    let names: BTreeSet<&str> = corpus.classes.iter().map(|c| c.name.as_str()).collect();
    if names.len() != corpus.classes.len() {
        return Err(HptError::Structural("duplicate class names".into()));
    }
    let mut report = ValidationReport::default();
    for class in &corpus.classes {
        let name = &class.name;
        if name.trim().is_empty() {
            return Err(HptError::Structural("class with an empty name".into()));
        }
        for (field, list) in [
            ("coarse", &class.coarse),
            ("fine", &class.fine),
            ("overall", &class.overall),
        ] {
            if list.len() != n_h {
                return Err(HptError::Structural(format!(
                    "class {name:?} has {} {field} descriptions, expected {n_h}",
                    list.len()
                )));
            }
            if let Some(i) = list.iter().position(|d| d.trim().is_empty()) {
                return Err(HptError::Structural(format!(
                    "class {name:?} {field} description {i} is empty"
                )));
            }
        }
        if class.relations.len() != n_h {
            return Err(HptError::Structural(format!(
                "class {name:?} has {} relation graphs, expected {n_h}",
                class.relations.len()
            )));
        }
        for other in &class.closest {
            if other == name || !names.contains(other.as_str()) {
                return Err(HptError::Structural(format!(
                    "class {name:?} lists invalid closest class {other:?}"
                )));
            }
        }
        for (i, (graph, text)) in class.relations.iter().zip(&class.overall).enumerate() {
            graph.validate().map_err(|e| {
                HptError::Structural(format!("class {name:?} relation graph {i}: {e}"))
            })?;
            let seq = TokenSequence::description(tokenizer, text);
            let alignment = align_words(&seq, graph);
            if !alignment.unmatched_words.is_empty() {
                report.warnings.push(AlignmentWarning {
                    class: name.clone(),
                    index: i,
                    miss_ratio: alignment.miss_ratio(),
                    missing: alignment.unmatched_words.clone(),
                });
            }
        }
    }
    Ok(report)
}

/// Parses a relation response: a JSON object with any of the graph fields,
/// or a bare JSON list of triples. Anything else fails with the raw text.
pub fn parse_relations(raw: &str) -> Result<RelationGraph> {
    let fail = |message: String| HptError::ResponseParse {
        message,
        raw: raw.to_string(),
    };
    let value: serde_json::Value =
        serde_json::from_str(raw.trim()).map_err(|e| fail(e.to_string()))?;
    let graph = match value {
        serde_json::Value::Array(_) => RelationGraph {
            triples: serde_json::from_value::<Vec<Triple>>(value)
                .map_err(|e| fail(e.to_string()))?,
            ..Default::default()
        },
        serde_json::Value::Object(ref map) => {
            const KEYS: [&str; 5] = ["entities", "attributes", "e2e", "e2a", "triples"];
            if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
                return Err(fail(format!("unexpected key {k:?}")));
            }
            serde_json::from_value::<RelationGraph>(value).map_err(|e| fail(e.to_string()))?
        }
        _ => return Err(fail("expected a JSON object or list".into())),
    };
    graph.validate().map_err(|e| fail(e.to_string()))?;
    Ok(graph)
}

/// `⌊log10 N_c⌋ + 1`, i.e. the number of decimal digits of `N_c`.
pub fn compute_c(num_classes: usize) -> Result<usize> {
    if num_classes == 0 {
        return Err(HptError::InvalidArgument(
            "class count must be at least 1".into(),
        ));
    }
    Ok(num_classes.ilog10() as usize + 1)
}

/// Mean of the normalized frozen embeddings of `descriptions`.
pub fn class_embedding(descriptions: &[String], encoder: &TextEncoder) -> Result<Vec<f64>> {
    if descriptions.is_empty() {
        return Err(HptError::InvalidArgument("no descriptions to embed".into()));
    }
    let tokenizer = encoder.tokenizer();
    let mut mean = vec![0.0; encoder.config.model_dim];
    for d in descriptions {
        let (_, z) = encoder.encode_frozen(&TokenSequence::description(&tokenizer, d))?;
        for (m, v) in mean.iter_mut().zip(normalize(&z)?) {
            *m += v;
        }
    }
    let n = descriptions.len() as f64;
    Ok(mean.into_iter().map(|m| m / n).collect())
}

/// The `c` classes other than `class` with highest cosine similarity to it,
/// ties broken by name.
pub fn select_closest(
    embeddings: &[(String, Vec<f64>)],
    class: &str,
    c: usize,
) -> Result<Vec<String>> {
    if c >= embeddings.len() {
        return Err(HptError::InvalidArgument(format!(
            "cannot pick {c} closest classes among {} classes",
            embeddings.len()
        )));
    }
    let (_, query) = embeddings
        .iter()
        .find(|(n, _)| n == class)
        .ok_or_else(|| HptError::MissingClass(class.to_string()))?;
    let mut scored = embeddings
        .iter()
        .filter(|(n, _)| n != class)
        .map(|(n, e)| Ok((cosine_similarity(query, e)?, n)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(c).map(|(_, n)| n.clone()).collect())
}

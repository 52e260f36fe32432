//! Structured relation graphs and their compilation into attention
//! modification matrices.
//!
//! Graph words are aligned to the low block of a token sequence by
//! case-insensitive whole-word matching. Every relation is written into the
//! matrix in both orientations, and only inside the low block.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::encoders::{AttentionModMatrix, ModMode, SegmentLayout, TokenSequence, Tokenizer};
use crate::error::{HptError, Result};
use crate::numerics::Tensor2;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub verb: String,
    pub object: String,
}

impl Triple {
    pub fn new(subject: &str, verb: &str, object: &str) -> Self {
        Self {
            subject: subject.into(),
            verb: verb.into(),
            object: object.into(),
        }
    }
}

/// Entities, attributes and their relations extracted from one description.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationGraph {
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub e2e: Vec<(String, String)>,
    #[serde(default)]
    pub e2a: Vec<(String, String)>,
    #[serde(default)]
    pub triples: Vec<Triple>,
}

impl RelationGraph {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
            && self.attributes.is_empty()
            && self.e2e.is_empty()
            && self.e2a.is_empty()
            && self.triples.is_empty()
    }

    /// Distinct lower-cased words that can carry matrix entries. Verbs are
    /// excluded.
    pub fn graph_words(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        let mut push = |w: &str| {
            let w = w.trim().to_lowercase();
            if !w.is_empty() && !seen.contains(&w) {
                seen.push(w);
            }
        };
        for w in self.entities.iter().chain(&self.attributes) {
            push(w);
        }
        for (a, b) in self.e2e.iter().chain(&self.e2a) {
            push(a);
            push(b);
        }
        for t in &self.triples {
            push(&t.subject);
            push(&t.object);
        }
        seen
    }

    /// Checks that typed pair endpoints are declared entities or attributes.
    pub fn validate(&self) -> Result<()> {
        let known: Vec<String> = self
            .entities
            .iter()
            .chain(&self.attributes)
            .map(|w| w.to_lowercase())
            .collect();
        for (a, b) in self.e2e.iter().chain(&self.e2a) {
            for w in [a, b] {
                if !known.contains(&w.to_lowercase()) {
                    return Err(HptError::Structural(format!(
                        "relation endpoint {w:?} is neither an entity nor an attribute"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The words fed as the low block when entities and attributes replace
    /// the description: entities first, then attributes.
    pub fn low_level_text(&self) -> String {
        let mut words: Vec<&str> = Vec::new();
        for w in self.entities.iter().chain(&self.attributes) {
            if !words.iter().any(|x| x.eq_ignore_ascii_case(w)) {
                words.push(w);
            }
        }
        words.join(" ")
    }

    /// Typed pairs recast as untyped triples, for multiplicative strategies
    /// over graphs that carry no triples of their own.
    pub fn untyped_view(&self) -> RelationGraph {
        if !self.triples.is_empty() {
            return self.clone();
        }
        let triples = self
            .e2e
            .iter()
            .chain(&self.e2a)
            .map(|(a, b)| Triple::new(a, "relates to", b))
            .collect();
        RelationGraph {
            triples,
            ..self.clone()
        }
    }
}

/// Graph word → token range inside the low block.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAlignment {
    pub spans: BTreeMap<String, Range<usize>>,
    pub unmatched_words: Vec<String>,
}

impl TokenAlignment {
    pub fn span(&self, word: &str) -> Option<Range<usize>> {
        self.spans.get(&word.trim().to_lowercase()).cloned()
    }

    /// Fraction of graph words that found no match.
    pub fn miss_ratio(&self) -> f64 {
        let total = self.spans.len() + self.unmatched_words.len();
        if total == 0 {
            0.0
        } else {
            self.unmatched_words.len() as f64 / total as f64
        }
    }
}

/// Maps each graph word (or phrase) to the tokens of its first whole-word
/// occurrence in the low block. Misses are recorded, never fatal.
pub fn align_words(seq: &TokenSequence, graph: &RelationGraph) -> TokenAlignment {
    let seq_words: Vec<&str> = seq.words().collect();
    let mut alignment = TokenAlignment::default();
    for word in graph.graph_words() {
        let phrase = Tokenizer::words(&word);
        let found = if phrase.is_empty() || phrase.len() > seq_words.len() {
            None
        } else {
            (0..=seq_words.len() - phrase.len())
                .find(|&i| phrase.iter().zip(&seq_words[i..]).all(|(p, s)| p == s))
        };
        match found {
            Some(i) => {
                let start = seq.word_spans[i].tokens.start;
                let end = seq.word_spans[i + phrase.len() - 1].tokens.end;
                alignment.spans.insert(word, start..end);
            }
            None => alignment.unmatched_words.push(word),
        }
    }
    alignment
}

fn mark_pair(
    mask: &mut Tensor2,
    alignment: &TokenAlignment,
    a: &str,
    b: &str,
    layout: &SegmentLayout,
) {
    let (Some(sa), Some(sb)) = (alignment.span(a), alignment.span(b)) else {
        return;
    };
    for i in sa {
        for j in sb.clone() {
            if layout.in_low(i) && layout.in_low(j) {
                mask.set(i, j, 1.0);
                mask.set(j, i, 1.0);
            }
        }
    }
}

/// 0/1 indicators of entity–entity and entity–attribute cells. A cell that
/// is both counts as entity–entity.
pub fn typed_indicators(
    graph: &RelationGraph,
    alignment: &TokenAlignment,
    layout: &SegmentLayout,
) -> (Tensor2, Tensor2) {
    let n = layout.total();
    let mut e2e = Tensor2::zeros(n, n);
    let mut e2a = Tensor2::zeros(n, n);
    for (a, b) in &graph.e2e {
        mark_pair(&mut e2e, alignment, a, b, layout);
    }
    for (a, b) in &graph.e2a {
        mark_pair(&mut e2a, alignment, a, b, layout);
    }
    let e2a = e2a.zip_map(&e2e, |a, e| if e > 0.0 { 0.0 } else { a });
    (e2e, e2a)
}

/// 0/1 indicator of subject↔object cells over all triples.
pub fn related_indicator(
    graph: &RelationGraph,
    alignment: &TokenAlignment,
    layout: &SegmentLayout,
) -> Tensor2 {
    let n = layout.total();
    let mut mask = Tensor2::zeros(n, n);
    for t in &graph.triples {
        mark_pair(&mut mask, alignment, &t.subject, &t.object, layout);
    }
    mask
}

/// `λ_e2e` on entity–entity cells, `λ_e2a` on entity–attribute cells, 0 elsewhere.
pub fn build_additive_matrix(
    graph: &RelationGraph,
    alignment: &TokenAlignment,
    lambda_e2e: f64,
    lambda_e2a: f64,
    layout: &SegmentLayout,
) -> AttentionModMatrix {
    let (e2e, e2a) = typed_indicators(graph, alignment, layout);
    additive_from_indicators(&e2e, &e2a, lambda_e2e, lambda_e2a)
}

pub fn additive_from_indicators(
    e2e: &Tensor2,
    e2a: &Tensor2,
    lambda_e2e: f64,
    lambda_e2a: f64,
) -> AttentionModMatrix {
    let values = e2e.zip_map(e2a, |e, a| {
        if e > 0.0 {
            lambda_e2e
        } else if a > 0.0 {
            lambda_e2a
        } else {
            0.0
        }
    });
    AttentionModMatrix {
        mode: ModMode::Additive,
        values,
    }
}

/// Fixed additive bias `β` on every related (triple) cell.
pub fn build_untyped_additive_matrix(
    graph: &RelationGraph,
    alignment: &TokenAlignment,
    beta: f64,
    layout: &SegmentLayout,
) -> Result<AttentionModMatrix> {
    check_beta(beta)?;
    let related = related_indicator(graph, alignment, layout);
    Ok(AttentionModMatrix {
        mode: ModMode::Additive,
        values: related.map(|r| if r > 0.0 { beta } else { 0.0 }),
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(HptError::InvalidArgument(format!(
            "re-weighting intensity must be a finite non-negative number, got {beta}"
        )));
    }
    Ok(())
}

/// Low block: `1 + β` on related cells, `1/(1 + β)` elsewhere (diagonal
/// included). Outside the low block every entry is 1.
pub fn build_reweight_matrix(
    graph: &RelationGraph,
    alignment: &TokenAlignment,
    beta: f64,
    layout: &SegmentLayout,
) -> Result<AttentionModMatrix> {
    check_beta(beta)?;
    let related = related_indicator(graph, alignment, layout);
    let n = layout.total();
    let mut values = Tensor2::filled(n, n, 1.0);
    let (up, down) = (1.0 + beta, 1.0 / (1.0 + beta));
    for i in layout.low_range() {
        for j in layout.low_range() {
            values.set(i, j, if related.get(i, j) > 0.0 { up } else { down });
        }
    }
    Ok(AttentionModMatrix {
        mode: ModMode::Multiplicative,
        values,
    })
}

/// `1 + β` on related cells, 1 everywhere else.
pub fn build_selective_matrix(
    graph: &RelationGraph,
    alignment: &TokenAlignment,
    beta: f64,
    layout: &SegmentLayout,
) -> Result<AttentionModMatrix> {
    check_beta(beta)?;
    let related = related_indicator(graph, alignment, layout);
    Ok(AttentionModMatrix {
        mode: ModMode::MultiplicativeSelective,
        values: related.map(|r| if r > 0.0 { 1.0 + beta } else { 1.0 }),
    })
}

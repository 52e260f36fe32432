//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use hpt_core::encoders::{ModMode, TokenSequence, Tokenizer};
use hpt_core::numerics::Tensor2;
use hpt_core::relgraph::{RelationGraph, Triple};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

pub const WORDS: [&str; 14] = [
    "wing", "beak", "tail", "red", "blue", "striped", "fur", "ear", "spotted", "long", "eye",
    "paw", "short", "round",
];
const FILLER: [&str; 4] = ["a", "with", "the", "and"];

/// A random low-block text, a graph over a subset of `WORDS` (some of which
/// may be absent from the text) and the built sequence.
pub fn random_case<R: Rng>(
    rng: &mut R,
    n_global: usize,
    n_high: usize,
) -> (TokenSequence, RelationGraph) {
    let len = rng.random_range(3..14);
    let text: Vec<&str> = (0..len)
        .map(|_| {
            if rng.random_bool(0.25) {
                *FILLER.choose(rng).unwrap()
            } else {
                *WORDS.choose(rng).unwrap()
            }
        })
        .collect();
    let mut present: Vec<String> = text
        .iter()
        .filter(|w| WORDS.contains(w))
        .map(|w| w.to_string())
        .collect();
    present.sort();
    present.dedup();
    let absent = WORDS.choose(rng).unwrap().to_string();
    if !present.contains(&absent) {
        present.push(absent);
    }
    let split = rng.random_range(1..=present.len());
    let mut shuffled = present.clone();
    shuffled.shuffle(rng);
    let entities: Vec<String> = shuffled[..split].to_vec();
    let attributes: Vec<String> = shuffled[split..].to_vec();
    let nodes: Vec<String> = entities.iter().chain(&attributes).cloned().collect();
    let pairs = |rng: &mut R, from: &[String], to: &[String], n: usize| -> Vec<(String, String)> {
        if from.is_empty() || to.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                (
                    from.choose(rng).unwrap().clone(),
                    to.choose(rng).unwrap().clone(),
                )
            })
            .collect()
    };
    let n_ee = rng.random_range(0..5);
    let n_ea = rng.random_range(0..5);
    let e2e = pairs(rng, &entities, &entities, n_ee);
    let e2a = pairs(rng, &entities, &attributes, n_ea);
    let n_t = rng.random_range(0..5);
    let triples = pairs(rng, &nodes, &nodes, n_t)
        .into_iter()
        .map(|(s, o)| Triple::new(&s, "has", &o))
        .collect();
    let graph = RelationGraph {
        entities,
        attributes,
        e2e,
        e2a,
        triples,
    };
    let seq = TokenSequence::build(
        &Tokenizer::new(512),
        "a photo of a thing",
        &text.join(" "),
        n_global,
        n_high,
    );
    (seq, graph)
}

/// Tokens of the first occurrence of `word` among the sequence's words.
pub fn first_span(seq: &TokenSequence, word: &str) -> Option<std::ops::Range<usize>> {
    seq.word_spans
        .iter()
        .find(|s| s.word == word.to_lowercase())
        .map(|s| s.tokens.clone())
}

fn in_low(seq: &TokenSequence, i: usize) -> bool {
    let l = seq.layout;
    let start = l.class_len + l.global_len + l.high_len;
    i >= start && i < start + l.low_len
}

/// Does cell `(i, j)` connect the two words of any pair, in either orientation?
pub fn cell_related(seq: &TokenSequence, pairs: &[(String, String)], i: usize, j: usize) -> bool {
    if !in_low(seq, i) || !in_low(seq, j) {
        return false;
    }
    pairs.iter().any(|(a, b)| {
        let (Some(sa), Some(sb)) = (first_span(seq, a), first_span(seq, b)) else {
            return false;
        };
        (sa.contains(&i) && sb.contains(&j)) || (sb.contains(&i) && sa.contains(&j))
    })
}

fn triple_pairs(graph: &RelationGraph) -> Vec<(String, String)> {
    graph
        .triples
        .iter()
        .map(|t| (t.subject.clone(), t.object.clone()))
        .collect()
}

pub fn oracle_additive(
    seq: &TokenSequence,
    graph: &RelationGraph,
    l_e2e: f64,
    l_e2a: f64,
) -> Vec<Vec<f64>> {
    let n = seq.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if cell_related(seq, &graph.e2e, i, j) {
                        l_e2e
                    } else if cell_related(seq, &graph.e2a, i, j) {
                        l_e2a
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn oracle_reweight(seq: &TokenSequence, graph: &RelationGraph, beta: f64) -> Vec<Vec<f64>> {
    let n = seq.len();
    let rel = triple_pairs(graph);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if !in_low(seq, i) || !in_low(seq, j) {
                        1.0
                    } else if cell_related(seq, &rel, i, j) {
                        1.0 + beta
                    } else {
                        1.0 / (1.0 + beta)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn to_rows(t: &Tensor2) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Loop-based `softmax(mod(QKᵀ, M)/√d) V`.
pub fn dense_attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    mode: ModMode,
    m: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = q.len();
    let d = q[0].len() as f64;
    let mut out = vec![vec![0.0; v[0].len()]; n];
    for i in 0..n {
        let mut logits = vec![0.0; n];
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..q[i].len() {
                s += q[i][t] * k[j][t];
            }
            s = match mode {
                ModMode::None => s,
                ModMode::Additive => s + m[i][j],
                _ => s * m[i][j],
            };
            logits[j] = s / d.sqrt();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..n {
            for t in 0..v[j].len() {
                out[i][t] += exps[j] / z * v[j][t];
            }
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Repeated arg-max selection over the other classes.
pub fn closest_scan(embeddings: &[(String, Vec<f64>)], class: &str, c: usize) -> Vec<String> {
    let query = &embeddings.iter().find(|(n, _)| n == class).unwrap().1;
    let mut taken: Vec<String> = Vec::new();
    for _ in 0..c {
        let mut best: Option<(f64, &String)> = None;
        for (name, e) in embeddings {
            if name == class || taken.contains(name) {
                continue;
            }
            let s = cosine(query, e);
            let better = match best {
                None => true,
                Some((bs, bn)) => s > bs || (s == bs && name < bn),
            };
            if better {
                best = Some((s, name));
            }
        }
        taken.push(best.unwrap().1.clone());
    }
    taken
}

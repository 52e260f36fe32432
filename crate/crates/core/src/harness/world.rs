use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::tokenizer::FIRST_WORD_ID;
use crate::encoders::{TextEncoder, Tokenizer};
use crate::error::{HptError, Result};
use crate::knowledge::{DatasetTemplate, LlmBackend};
use crate::numerics::Tensor2;
use crate::relgraph::{RelationGraph, Triple};

/// Connective words the synthetic author writes between keywords.
const FILLERS: [&str; 9] = [
    "it",
    "has",
    "and",
    "with",
    "shows",
    "unlike",
    "its",
    "relatives",
    "plus",
];
const ONSETS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// One category of a synthetic dataset. `entities[k]` is described by
/// `attributes[k]`; index 0 is shared with the rest of the family.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticClass {
    pub name: String,
    pub family: usize,
    pub entities: Vec<String>,
    pub attributes: Vec<String>,
}

impl SyntheticClass {
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.attributes
            .iter()
            .map(String::as_str)
            .zip(self.entities.iter().map(String::as_str))
    }
}

/// Extra test-time perturbation for domain-shift variants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    /// Standard deviation of added Gaussian noise.
    pub noise_scale: f64,
    /// Probability of zeroing each feature channel.
    pub channel_drop: f64,
}

impl DomainShift {
    pub const NONE: DomainShift = DomainShift {
        noise_scale: 0.0,
        channel_drop: 0.0,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub num_classes: usize,
    pub family_size: usize,
    pub seed: u64,
    /// Per-entry standard deviation of sample noise around the prototype.
    pub noise: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub class_token_pattern: String,
    pub type_token: String,
}

impl DatasetSpec {
    pub fn new(name: &str, num_classes: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            num_classes,
            family_size: 2,
            seed,
            noise: 0.5,
            train_per_class: 32,
            test_per_class: 50,
            class_token_pattern: "a photo of a [X]".into(),
            type_token: "types of objects".into(),
        }
    }

    /// Datasets known to the command line.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "toy8" => Ok(Self::new("toy8", 8, 11)),
            "toy6" => Ok(Self::new("toy6", 6, 23)),
            "toy12" => Ok(Self::new("toy12", 12, 37)),
            other => Err(HptError::InvalidArgument(format!(
                "unknown dataset {other:?} (available: {})",
                Self::BUILTIN.join(", ")
            ))),
        }
    }

    pub const BUILTIN: [&'static str; 3] = ["toy8", "toy6", "toy12"];

    pub fn template(&self, n_h: usize) -> Result<DatasetTemplate> {
        DatasetTemplate::with_default_questions(
            &self.name,
            &self.class_token_pattern,
            &self.type_token,
            n_h,
        )
    }
}

/// Pseudo-words that each map to a single token, distinct from one another
/// and from every filler word.
fn invent_words(
    rng: &mut ChaCha8Rng,
    tokenizer: &Tokenizer,
    count: usize,
    used: &mut BTreeSet<usize>,
) -> Vec<String> {
    let mut words = Vec::with_capacity(count);
    while words.len() < count {
        let syllables = rng.random_range(2..=3);
        let word: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    ONSETS[rng.random_range(0..ONSETS.len())],
                    VOWELS[rng.random_range(0..VOWELS.len())]
                )
            })
            .collect();
        let ids = tokenizer.word_ids(&word);
        if ids.len() == 1 && ids[0] >= FIRST_WORD_ID && used.insert(ids[0]) {
            words.push(word);
        }
    }
    words
}

/// Classes, their prototype-based image samples, and the words that tie
/// the two together through the shared token embedding table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    pub classes: Vec<SyntheticClass>,
    /// Per class, the pool few-shot training samples are drawn from.
    pub train: Vec<Vec<Tensor2>>,
    pub test: Vec<Vec<Tensor2>>,
}

impl SyntheticDataset {
    /// Prototype of a class: the embeddings of its attribute and entity words,
    /// one feature token each. Samples add `noise`-scaled Gaussian noise.
    pub fn generate(spec: DatasetSpec, encoder: &TextEncoder) -> Result<Self> {
        if spec.num_classes == 0 || spec.family_size == 0 {
            return Err(HptError::InvalidArgument(
                "dataset needs classes and families".into(),
            ));
        }
        let tokenizer = encoder.tokenizer();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut used: BTreeSet<usize> =
            FILLERS.iter().flat_map(|w| tokenizer.word_ids(w)).collect();
        let families = spec.num_classes.div_ceil(spec.family_size);
        let family_words: Vec<(String, String)> = (0..families)
            .map(|_| {
                let w = invent_words(&mut rng, &tokenizer, 2, &mut used);
                (w[0].clone(), w[1].clone())
            })
            .collect();
        let classes: Vec<SyntheticClass> = (0..spec.num_classes)
            .map(|c| {
                let family = c / spec.family_size;
                let mut w = invent_words(&mut rng, &tokenizer, 5, &mut used);
                let name = capitalize(&w.remove(0));
                let (fe, fa) = family_words[family].clone();
                SyntheticClass {
                    name,
                    family,
                    entities: vec![fe, w[0].clone(), w[1].clone()],
                    attributes: vec![fa, w[2].clone(), w[3].clone()],
                }
            })
            .collect();

        let d = encoder.config.model_dim;
        let prototypes: Vec<Tensor2> = classes
            .iter()
            .map(|c| {
                let rows: Vec<Vec<f64>> = c
                    .pairs()
                    .flat_map(|(a, e)| [a, e])
                    .map(|w| encoder.embed_token(tokenizer.word_ids(w)[0]).to_vec())
                    .collect();
                Tensor2::from_rows(&rows)
            })
            .collect::<Result<_>>()?;
        let mut draw = |proto: &Tensor2, n: usize| -> Vec<Tensor2> {
            (0..n)
                .map(|_| {
                    proto.add(&Tensor2::random_normal(
                        proto.rows(),
                        d,
                        spec.noise,
                        &mut rng,
                    ))
                })
                .collect()
        };
        let train = prototypes
            .iter()
            .map(|p| draw(p, spec.train_per_class))
            .collect();
        let test = prototypes
            .iter()
            .map(|p| draw(p, spec.test_per_class))
            .collect();
        Ok(Self {
            spec,
            classes,
            train,
            test,
        })
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Copy whose test samples carry an extra seeded perturbation. Class
    /// words and training pools are untouched.
    pub fn shifted(&self, shift: DomainShift, seed: u64) -> Result<Self> {
        if !(shift.noise_scale >= 0.0) || !(0.0..=1.0).contains(&shift.channel_drop) {
            return Err(HptError::InvalidArgument(format!(
                "invalid domain shift {shift:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for samples in &mut out.test {
            for x in samples.iter_mut() {
                let (rows, cols) = x.shape();
                let keep: Vec<bool> = (0..cols)
                    .map(|_| rng.random::<f64>() >= shift.channel_drop)
                    .collect();
                for r in 0..rows {
                    for c in 0..cols {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let v = x.get(r, c) + shift.noise_scale * noise;
                        x.set(r, c, if keep[c] { v } else { 0.0 });
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn author(&self) -> SyntheticAuthor {
        SyntheticAuthor::new(self.classes.clone())
    }
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum WordKind {
    Entity,
    Attribute,
}

/// Deterministic stand-in for a language model that knows the synthetic
/// world. It answers the four instruction kinds of the knowledge pipeline;
/// the wording variant is chosen by the instruction's hash.
#[derive(Clone, Debug)]
pub struct SyntheticAuthor {
    classes: Vec<SyntheticClass>,
    lexicon: BTreeMap<String, WordKind>,
}

impl SyntheticAuthor {
    pub fn new(classes: Vec<SyntheticClass>) -> Self {
        let mut lexicon = BTreeMap::new();
        for c in &classes {
            for e in &c.entities {
                lexicon.insert(e.clone(), WordKind::Entity);
            }
            for a in &c.attributes {
                lexicon.insert(a.clone(), WordKind::Attribute);
            }
        }
        Self { classes, lexicon }
    }

    /// The class whose name appears first in `instruction`.
    fn subject(&self, instruction: &str) -> Result<&SyntheticClass> {
        let words = Tokenizer::words(instruction);
        words
            .iter()
            .find_map(|w| self.classes.iter().find(|c| c.name.to_lowercase() == *w))
            .ok_or_else(|| {
                HptError::Backend(format!("no known class in instruction {instruction:?}"))
            })
    }

    fn coarse(c: &SyntheticClass, v: usize) -> String {
        let p: Vec<(&str, &str)> = c.pairs().collect();
        let (a, b) = (p[v % 3], p[(v + 1) % 3]);
        format!("it has {} {} and {} {}", a.0, a.1, b.0, b.1)
    }

    fn fine(c: &SyntheticClass, v: usize) -> String {
        let p: Vec<(&str, &str)> = c.pairs().collect();
        let (a, b) = if v % 2 == 0 {
            (p[1], p[2])
        } else {
            (p[2], p[1])
        };
        format!(
            "unlike its relatives it shows {} {} with {} {}",
            a.0, a.1, b.0, b.1
        )
    }

    fn overall(c: &SyntheticClass, v: usize) -> String {
        let p: Vec<(&str, &str)> = c.pairs().collect();
        let (a, b, d) = if v % 6 < 3 {
            (p[v % 3], p[(v + 1) % 3], p[(v + 2) % 3])
        } else {
            (p[v % 3], p[(v + 2) % 3], p[(v + 1) % 3])
        };
        format!(
            "it has {} {} with {} {} and {} {}",
            a.0, a.1, b.0, b.1, d.0, d.1
        )
    }

    /// Attribute–entity adjacencies become `is` triples and e2a pairs;
    /// consecutive entities become `has` triples and e2e pairs.
    pub fn relations(&self, description: &str) -> RelationGraph {
        let words = Tokenizer::words(description);
        let kinds: Vec<Option<WordKind>> =
            words.iter().map(|w| self.lexicon.get(w).copied()).collect();
        let mut g = RelationGraph::default();
        let mut last_entity: Option<&str> = None;
        for (i, w) in words.iter().enumerate() {
            match kinds[i] {
                Some(WordKind::Entity) => {
                    if !g.entities.contains(w) {
                        g.entities.push(w.clone());
                    }
                    if let Some(prev) = last_entity {
                        if prev != w {
                            g.e2e.push((prev.to_string(), w.clone()));
                            g.triples.push(Triple::new(prev, "has", w));
                        }
                    }
                    last_entity = Some(w);
                }
                Some(WordKind::Attribute) => {
                    if !g.attributes.contains(w) {
                        g.attributes.push(w.clone());
                    }
                    if let (Some(WordKind::Entity), Some(next)) =
                        (kinds.get(i + 1).copied().flatten(), words.get(i + 1))
                    {
                        g.e2a.push((next.clone(), w.clone()));
                        g.triples.push(Triple::new(next, "is", w));
                    }
                }
                None => {}
            }
        }
        g
    }
}

fn variant(instruction: &str) -> usize {
    Sha256::digest(instruction.as_bytes())[0] as usize
}

impl LlmBackend for SyntheticAuthor {
    fn model(&self) -> &str {
        "synthetic-author"
    }

    fn complete(&self, instruction: &str) -> Result<String> {
        let v = variant(instruction);
        if let Some((_, description)) = instruction.split_once("Description: ") {
            return Ok(serde_json::to_string(&self.relations(description))?);
        }
        let class = self.subject(instruction)?;
        Ok(if instruction.starts_with("Please summarize") {
            Self::overall(class, v)
        } else if instruction.contains(" compared with ") {
            Self::fine(class, v)
        } else {
            Self::coarse(class, v)
        })
    }
}

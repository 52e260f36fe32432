use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::client::LlmClient;
use super::corpus::{
    class_embedding, compute_c, parse_relations, select_closest, ClassKnowledge, DescriptionCorpus,
};
use super::template::{relation_instruction, summarize_instruction, DatasetTemplate};
use crate::encoders::TextEncoder;
use crate::error::{HptError, Result};
use crate::relgraph::RelationGraph;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeConfig {
    pub n_h: usize,
    /// Concurrent classes in flight.
    pub workers: usize,
    pub max_description_chars: usize,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self {
            n_h: 5,
            workers: 4,
            max_description_chars: 1000,
        }
    }
}

fn checked_description(text: String, max_chars: usize) -> Result<String> {
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(HptError::Backend("empty description".into()));
    }
    if text.chars().count() > max_chars {
        return Err(HptError::ResponseParse {
            message: format!("description longer than {max_chars} characters"),
            raw: text,
        });
    }
    Ok(text)
}

pub fn generate_coarse(
    template: &DatasetTemplate,
    class: &str,
    client: &LlmClient,
    config: &KnowledgeConfig,
) -> Result<Vec<String>> {
    template.validate(config.n_h)?;
    (0..config.n_h)
        .map(|i| {
            let text = client.complete(&template.coarse_instruction(i, class)?)?;
            checked_description(text, config.max_description_chars)
        })
        .collect()
}

pub fn generate_fine(
    template: &DatasetTemplate,
    class: &str,
    closest: &[String],
    client: &LlmClient,
    config: &KnowledgeConfig,
) -> Result<Vec<String>> {
    template.validate(config.n_h)?;
    (0..config.n_h)
        .map(|i| {
            let text = client.complete(&template.fine_instruction(i, class, closest)?)?;
            checked_description(text, config.max_description_chars)
        })
        .collect()
}

pub fn summarize_overall(
    class_token: &str,
    d1: &str,
    d2: &str,
    client: &LlmClient,
    config: &KnowledgeConfig,
) -> Result<String> {
    if d1.trim().is_empty() || d2.trim().is_empty() {
        return Err(HptError::InvalidArgument(
            "cannot summarize an empty description".into(),
        ));
    }
    let text = client.complete(&summarize_instruction(class_token, d1, d2))?;
    checked_description(text, config.max_description_chars)
}

pub fn extract_relations(description: &str, client: &LlmClient) -> Result<RelationGraph> {
    if description.trim().is_empty() {
        return Err(HptError::InvalidArgument(
            "cannot extract relations from an empty description".into(),
        ));
    }
    parse_relations(&client.complete(&relation_instruction(description))?)
}

/// Applies `f` to every item on at most `workers` threads. Results keep item
/// order, and the first failing item (by index) decides the error.
pub fn parallel_map<T, U, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let slots: Vec<Mutex<Option<Result<U>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                *slots[i].lock().expect("slot poisoned") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .expect("slot poisoned")
                .expect("every slot filled")
        })
        .collect()
}

/// Coarse descriptions, closest categories, fine descriptions, overall
/// merges and relation graphs for every class.
pub fn generate_corpus(
    template: &DatasetTemplate,
    classes: &[String],
    client: &LlmClient,
    encoder: &TextEncoder,
    config: &KnowledgeConfig,
) -> Result<DescriptionCorpus> {
    if classes.is_empty() {
        return Err(HptError::InvalidArgument("no classes to describe".into()));
    }
    template.validate(config.n_h)?;
    let coarse = parallel_map(classes, config.workers, |c| {
        generate_coarse(template, c, client, config)
    })?;

    let embeddings = classes
        .iter()
        .zip(&coarse)
        .map(|(c, d)| Ok((c.clone(), class_embedding(d, encoder)?)))
        .collect::<Result<Vec<_>>>()?;
    let count = compute_c(classes.len())?.min(classes.len() - 1);

    let indices: Vec<usize> = (0..classes.len()).collect();
    let entries = parallel_map(&indices, config.workers, |&k| {
        let name = &classes[k];
        let closest = select_closest(&embeddings, name, count)?;
        let fine = generate_fine(template, name, &closest, client, config)?;
        let class_token = template.class_token(name)?;
        let overall = coarse[k]
            .iter()
            .zip(&fine)
            .map(|(d1, d2)| summarize_overall(&class_token, d1, d2, client, config))
            .collect::<Result<Vec<_>>>()?;
        let relations = overall
            .iter()
            .map(|d| extract_relations(d, client))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassKnowledge {
            name: name.clone(),
            class_token,
            type_token: template.type_token.clone(),
            coarse: coarse[k].clone(),
            fine,
            overall,
            relations,
            closest,
        })
    })?;

    Ok(DescriptionCorpus {
        dataset: template.dataset_name.clone(),
        n_h: config.n_h,
        classes: entries,
    })
}

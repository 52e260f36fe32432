use crate::encoders::TextEncoder;
use crate::error::Result;
use crate::knowledge::{
    generate_corpus, DescriptionCorpus, FixtureStore, KnowledgeConfig, LlmClient, RecordingBackend,
};

use super::world::SyntheticDataset;

/// Runs the knowledge pipeline against the dataset's synthetic author and
/// keeps every answer as a fixture.
pub fn author_fixtures(
    dataset: &SyntheticDataset,
    encoder: &TextEncoder,
    config: &KnowledgeConfig,
) -> Result<FixtureStore> {
    let recorder = std::sync::Arc::new(RecordingBackend::new(dataset.author()));
    let client = LlmClient::new(Box::new(SharedBackend(recorder.clone())));
    generate_corpus(
        &dataset.spec.template(config.n_h)?,
        &dataset.class_names(),
        &client,
        encoder,
        config,
    )?;
    drop(client);
    let recorder = std::sync::Arc::into_inner(recorder).expect("client dropped");
    Ok(recorder.into_fixtures())
}

/// Replays the pipeline for `dataset` from stored fixtures.
pub fn corpus_from_fixtures(
    dataset: &SyntheticDataset,
    fixtures: FixtureStore,
    encoder: &TextEncoder,
    config: &KnowledgeConfig,
) -> Result<DescriptionCorpus> {
    generate_corpus(
        &dataset.spec.template(config.n_h)?,
        &dataset.class_names(),
        &LlmClient::fixtures(fixtures),
        encoder,
        config,
    )
}

/// Fixtures recorded from the author, then replayed.
pub fn synthetic_corpus(
    dataset: &SyntheticDataset,
    encoder: &TextEncoder,
    config: &KnowledgeConfig,
) -> Result<DescriptionCorpus> {
    let fixtures = author_fixtures(dataset, encoder, config)?;
    corpus_from_fixtures(dataset, fixtures, encoder, config)
}

struct SharedBackend<B>(std::sync::Arc<B>);

impl<B: crate::knowledge::LlmBackend> crate::knowledge::LlmBackend for SharedBackend<B> {
    fn model(&self) -> &str {
        self.0.model()
    }

    fn complete(&self, instruction: &str) -> Result<String> {
        self.0.complete(instruction)
    }
}

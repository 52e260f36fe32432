//! Multi-granularity description generation: instruction templates, the
//! language-model client (fixture or live), the coarse → closest → fine →
//! overall → relations pipeline, and corpus validation.

mod client;
mod corpus;
mod pipeline;
mod template;

pub use client::{
    instruction_hash, FixtureStore, LiveBackend, LlmBackend, LlmClient, LogEntry, RecordingBackend,
    API_KEY_VAR, ENDPOINT_VAR, MODEL_VAR,
};
pub use corpus::{
    class_embedding, compute_c, parse_relations, select_closest, validate_corpus, AlignmentWarning,
    ClassKnowledge, DescriptionCorpus, ValidationReport,
};
pub use pipeline::{
    extract_relations, generate_coarse, generate_corpus, generate_fine, parallel_map,
    summarize_overall, KnowledgeConfig,
};
pub use template::{
    append_comparison, relation_instruction, render_instruction, summarize_instruction,
    DatasetTemplate, QUESTION_POOL,
};

//! Dual-path asymmetric objective with a consistency term, the SGD loop and
//! inference-time class embeddings.

mod config;
mod losses;
mod model;
mod trainer;

pub use config::{Granularity, Mode, ReweightStrategy, TrainConfig};
pub use losses::{
    asymmetric_loss, asymmetric_loss_with_grads, consistency_loss, pair_probabilities, total_loss,
    AsymmetricOutput, LossBreakdown,
};
pub use model::{
    category_embedding_inference, step_gradients, step_loss, text_backward, text_forward, Batch,
    ClassContext, ClassifierHead, DescriptionContext, HptModel, TextForward, Towers,
};
pub use trainer::{
    sample_description, trace_to_jsonl, train, train_with_contexts, LabeledSample, LossRecord,
};

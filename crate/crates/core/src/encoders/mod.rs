//! Frozen and prompted encoders.
//!
//! The text tower runs either plainly over a description or hierarchically
//! over `[class | global | high | low]` with a per-layer attention
//! modification matrix. The visual tower is a deep-prompted toy
//! transformer over feature tokens.

mod attention;
mod block;
mod bundle;
mod checkpoint;
mod config;
mod sequence;
mod text;
pub mod tokenizer;
mod visual;

pub use attention::{modified_attention, AttentionModMatrix, ModMode};
pub use block::{Backbone, TransformerBlock};
pub(crate) use bundle::stacked_states;
pub use bundle::{
    apply_adapter, generate_high_prompts, LayerStates, PromptBundle, PROMPT_INIT_STD,
};
pub use checkpoint::{
    from_checkpoint_str, load_checkpoint, save_checkpoint, to_checkpoint_string, CHECKPOINT_VERSION,
};
pub use config::EncoderConfig;
pub use sequence::{SegmentLayout, TokenSequence, WordSpan};
pub use text::{AttentionDump, HierarchicalGrads, HierarchicalPass, LayerOutputHook, TextEncoder};
pub use tokenizer::Tokenizer;
pub use visual::{VisualEncoder, VisualPass};

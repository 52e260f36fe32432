//! Hierarchical prompt tuning for toy vision-language encoders.
//!
//! * [`numerics`]: dense tensors, hand-written backward passes, gradient checks
//! * [`encoders`]: frozen and hierarchical-prompted text encoder, visual encoder
//! * [`relgraph`]: relation graphs compiled into attention modification matrices
//! * [`knowledge`]: LLM-driven description and relation generation
//! * [`training`]: asymmetric and consistency losses, SGD loop, inference embeddings
//! * [`harness`]: synthetic datasets, protocols, metrics and ablations

pub mod encoders;
pub mod error;
pub mod harness;
pub mod knowledge;
pub mod numerics;
pub mod relgraph;
pub mod training;

pub use error::{HptError, Result};

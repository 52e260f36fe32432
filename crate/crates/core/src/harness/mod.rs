//! Synthetic datasets and their language-model author, split protocols,
//! metrics, evaluation drivers and ablation suites.

mod ablation;
mod gradcheck;
mod knowledge;
mod protocols;
mod world;

pub use ablation::{run_ablation, AblationReport, AblationRow, AblationSuite};
pub use gradcheck::{gradient_suite, GradientGroup, GradientReport};
pub use knowledge::{author_fixtures, corpus_from_fixtures, synthetic_corpus};
pub use protocols::{
    accuracy, bundle_values, class_contexts, cross_dataset_eval, default_shifts, domain_gen_eval,
    evaluate, harmonic_mean, make_splits, train_all_classes, train_base, training_samples,
    MetricRow, MetricsReport, SplitSpec, DEFAULT_SHOTS,
};
pub use world::{DatasetSpec, DomainShift, SyntheticAuthor, SyntheticClass, SyntheticDataset};

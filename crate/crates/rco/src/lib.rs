//! Refinement-oriented critique optimization toolkit.
//!
//! Builds critique-training data from refinement outcomes: sample critiques
//! and refined responses from model endpoints, judge refined-vs-initial
//! preference with position-swap debiasing, turn the preference rates into
//! critique-utility rewards and regression targets, and verify the training
//! objective against closed-form solutions on enumerable toy policies.
//!
//! Start with the runnable examples (`cargo run --example desk_pipeline`)
//! or the `rco` binary for stage-wise runs over record files.

pub mod config;
pub mod fixtures;
pub mod gateway;
pub mod judge;
pub mod metrics;
pub mod records;
pub mod reward;
pub mod sampler;
pub mod stages;
pub mod templates;
pub mod trainer;

pub use config::{validate_config, PipelineConfig};
pub use records::{CritiqueRecord, PromptRecord, RefinementRecord, ResponseRecord, TaskKind};

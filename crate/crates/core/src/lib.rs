//! Metric engine for feature-attribution explanations of text classifiers.
//!
//! The crate consumes serialized explanation records (see [`ingest`]) and
//! computes four quality metrics over them:
//!
//! - [`ha`]: agreement with human rationales via ranked average precision.
//! - [`robustness`]: saliency drift between an input and a perturbed copy.
//! - [`consistency`]: rank correlation between cross-seed attention distances
//!   and cross-seed explanation distances.
//! - [`contrastivity`]: KL divergence between importance distributions of two
//!   classes.
//!
//! [`aggregate`] folds the four metrics into a combined weighted score,
//! renders report tables and checks the published reference tables for
//! internal coherence.
//!
//! Per-instance work fans out through [`par`]; every reduction consumes
//! results in sorted instance order so reports are byte-reproducible
//! regardless of worker count.

pub mod aggregate;
pub mod consistency;
pub mod contrastivity;
pub mod digest;
pub mod ha;
pub mod ingest;
pub mod model;
pub mod par;
pub mod robustness;

pub use model::{
    AttentionSummary, ClassContrastPair, ExplanationKey, ExplanationRecord, MetricKind,
    MetricReport, ModelError, PerturbationKind, PerturbationPair, RankedToken,
    RationaleAnnotation,
};
pub use par::Execution;

/// Version string stamped into every report.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The only record schema version this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

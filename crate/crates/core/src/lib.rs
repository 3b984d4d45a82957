//! Continual adaptation of vision-language embeddings guided by general
//! attribute descriptions.
//!
//! The crate works entirely on frozen, pre-extracted embeddings:
//!
//! - [`bundle`] holds visual embeddings, class-text embeddings and description
//!   candidate embeddings, with a directory-based on-disk format and a seeded
//!   synthetic generator.
//! - [`filter`] keeps only the description candidates whose similarity to a
//!   visual feature clears the class-text anchor by a margin.
//! - [`objective`] computes the instance-matching, text-alignment and
//!   intra-task classification losses with closed-form gradients.
//! - [`adapter`] and [`calibrate`] hold the trainable state: a residual linear
//!   map on visual features and per-class shift weights on text embeddings.
//! - [`trainer`] runs the per-task SGD loop and [`eval`] computes the
//!   class-incremental metrics.
//!
//! The `desclip` binary in this crate wraps the pipeline; see [`cli`].

// `!(x > y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod bundle;
pub mod calibrate;
pub mod cli;
mod error;
pub mod eval;
pub mod filter;
pub mod linalg;
pub mod objective;
pub mod trainer;

pub use adapter::AdapterState;
pub use bundle::{ClassRecord, DescriptionCandidate, EmbeddingBundle, Sample, SynthSpec};
pub use calibrate::{CalibrationMode, ShiftBank};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use filter::{FilterParams, FilteredEvidence};
pub use objective::{LossBreakdown, Temperatures};
pub use trainer::{RunConfig, TaskCheckpoint};

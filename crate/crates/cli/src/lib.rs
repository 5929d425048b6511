//! Pipeline orchestration for relmob: configuration, the stage runner,
//! the artifact manifest and SVG figures.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod figures;
pub mod manifest;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{CliError, Stage};
pub use pipeline::{run, RunOptions, RunOutcome};

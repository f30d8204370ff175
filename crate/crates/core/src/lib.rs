//! Survival-analysis toolkit for multimodal risk modeling on tabular
//! feature blocks.
//!
//! The crate covers the full path from raw inputs to evaluation:
//!
//! - [`cohort`]: scan-level survival records, horizon censoring, and
//!   patient-level train/validation/test splitting.
//! - [`features`]: named, block-structured feature tables, z-scoring,
//!   early-fusion concatenation, and correlation-threshold selection.
//! - [`cox`]: the Cox negative partial log-likelihood (Breslow ties), its
//!   analytic gradient, and a Newton-Raphson linear baseline.
//! - [`mlp`]: a from-scratch MLP risk model with batch normalization,
//!   dropout, AdamW, and early stopping on validation loss.
//! - [`metrics`]: Harrell's C-index, bootstrap confidence intervals,
//!   Kaplan-Meier curves, threshold-zero stratification, and the log-rank
//!   test.
//! - [`reports`]: radiology-report cleaning, section segmentation, and
//!   sentence-bundle export for an external embedder.
//! - [`simdata`]: a Weibull proportional-hazards cohort generator used as
//!   the ground-truth oracle for everything above.
//! - [`pipeline`]: experiment configs and the end-to-end train / eval /
//!   ablate runners behind the CLI.
//!
//! Data-parallel inner loops (bootstrap replicates, correlation scans,
//! batched matrix products) run on rayon when the default `parallel`
//! feature is enabled and fall back to equivalent sequential code when it
//! is not. Both paths produce bitwise-identical results; see [`parallel`].

pub mod cohort;
pub mod cox;
pub mod features;
mod fsio;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod parallel;
pub mod pipeline;
pub mod reports;
pub mod simdata;

pub use cohort::{Cohort, Site, Split, SplitAssignment, SurvivalRecord};
pub use features::{FeatureTable, SelectionMask, StandardizationParams};
pub use mlp::{MlpConfig, MlpModel, TrainConfig, TrainHistory};

//! Benchmark harness for concrete surface crack detection.
//!
//! The pipeline stages are:
//!
//! 1. **dataset** — two-class patch corpus ingestion, deterministic
//!    stratified splits with on-disk manifests, pixel normalization, and
//!    patch extraction from high-resolution images.
//! 2. **model** — registry of pretrained backbone descriptors; classifiers
//!    built by replacing a backbone's classification layers with a binary
//!    head, in frozen-feature or full fine-tuning regimes.
//! 3. **training** — seeded training runs, held-out evaluation, and the
//!    multi-run experiment driver with persisted result files.
//! 4. **metrics** — confusion-matrix metrics with an explicit undefined
//!    marker, plus mean / sample-std aggregation across runs.
//! 5. **stats** — one-way ANOVA across models per metric with exact
//!    F-distribution tails.
//! 6. **localize** — sliding-window crack localization with merged
//!    bounding boxes.
//!
//! Every random decision flows from explicit seeds through one documented
//! generator ([`rng::SplitMix64`]), so splits, runs, and reports reproduce
//! exactly.

pub mod dataset;
pub mod error;
pub mod localize;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod report;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod training;

pub use error::{Error, ErrorCategory, Result};

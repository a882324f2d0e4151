//! Synthetic supervised dataset generation from label-conditional prompts.
//!
//! The crate is organised as a pipeline:
//!
//! - [`task`]: task, label and dataset model plus the on-disk record formats.
//! - [`prompt`]: template rendering for single, sentence-pair, word-augmented
//!   and few-shot prompts.
//! - [`gateway`]: the text-generation backend trait with a seeded mock and a
//!   chat-completions HTTP client, fronted by an optional response cache.
//! - [`synth`]: per-label generation loops that parse completions and
//!   assemble balanced datasets.
//! - [`metrics`]: Self-BLEU, weighted Jaccard, accuracy, MSE, Spearman, MCC
//!   and reference-model label correctness.
//! - [`trainer`]: a hashed character n-gram linear model trained with
//!   label-smoothed cross-entropy and AdamW.
//! - [`runner`]: experiment orchestration, aggregation and report rendering.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod error;
pub mod exec;
pub mod gateway;
pub mod hashing;
pub mod metrics;
pub mod prompt;
pub mod runner;
pub mod synth;
pub mod task;
pub mod trainer;

pub use error::Error;
pub use exec::Parallelism;
pub use task::{Dataset, LabelSpec, LabeledSample, TaskKind, TaskSpec};

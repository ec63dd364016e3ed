//! Cross-modal curriculum construction for infrared-text training data.
//!
//! The pipeline scores every infrared sample twice:
//!
//! * [`kernel_lesson`] measures how far a sample sits from the visible domain,
//!   using Gaussian-kernel mean embeddings and the maximum mean discrepancy
//!   between the infrared and visible embedding sets;
//! * [`alignment_lesson`] warms up a small two-tower contrastive scorer and
//!   records each image-text pair's loss before and after, giving a loss
//!   variation rate and an adaptive sample weight.
//!
//! [`curriculum`] fuses both rankings, cuts them into tiers and emits one of
//! six sample orderings. [`trainer`] is a reference softmax classifier that
//! consumes a plan under the weighted cross-entropy objective. [`pairgen`]
//! produces rule-based captions and benchmark questions from detection
//! annotations, and [`bench_eval`] scores predictions on the nine benchmark
//! tasks.

pub mod alignment_lesson;
pub mod bench_eval;
pub mod cli;
pub mod curriculum;
pub mod ingest;
pub mod kernel_lesson;
pub mod pairgen;
pub mod rng;
pub mod stats;
pub mod task;
pub mod trainer;

pub use ingest::{Domain, SampleId};
pub use task::TaskKind;

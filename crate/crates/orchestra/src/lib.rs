//! Orchestra: a desk-scale engine for training and dissecting learned
//! multi-expert orchestration policies.
//!
//! A learned controller coordinates a consortium of simulated experts: an
//! interaction module produces an input-conditioned expert-to-expert
//! transition matrix, and a selection module samples execution sequences via
//! straight-through Gumbel-Softmax. Alongside the controller, a probe suite
//! separates what routing statistics conflate:
//!
//! * relational importance — incoming routing mass per expert,
//! * intrinsic importance — gradient-norm sensitivity of selection
//!   log-probabilities to expert representations,
//! * sequencing — entropy of the first-selection distribution,
//! * perturbation sensitivity — KL shifts under targeted prompt damage,
//! * masking interventions — routing collapse when experts are removed,
//!
//! with nonparametric statistics (Spearman, Kendall, Wilcoxon, paired t)
//! for reporting.
//!
//! Start with the runnable examples (`cargo run --example train_synthetic`)
//! or the `orchestra` binary (`train | probe | perturb | mask | cascade |
//! report`).

pub mod config;
pub mod diff;
pub mod error;
pub mod experts;
pub mod orchestrator;
pub mod probes;
pub mod report;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod trace;
pub mod training;

pub use error::{Error, Result};

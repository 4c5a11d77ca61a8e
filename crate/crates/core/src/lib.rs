//! Prompt-based out-of-distribution scoring over precomputed vision-language
//! embeddings.
//!
//! This crate is `no_std` (it needs `alloc`) and holds every numerical piece
//! of the toolkit: the in-memory bundle model and its validation, prompt
//! rendering and complexity statistics, the VLM and logit-based scoring rules,
//! exact AUROC / FPR@TPR metrics, the embedding-space property checks, a
//! seeded synthetic embedding-space generator, and the sweep procedures that
//! turn bundles into [`sweep::EvalReport`]s.
//!
//! File formats, the CLI and parallel execution live in the `oodkit` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![forbid(unsafe_code)]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod embedding;
pub mod insight;
pub mod metrics;
mod numeric;
pub mod prompt;
pub mod scoring;
pub mod sweep;
pub mod synth;

pub use embedding::{Bundle, EmbeddingMatrix, Logits, Violation, ViolationKind};
pub use metrics::{auroc, fpr_at_tpr, pearson_r, MetricError, MetricResult, ScoreVector};
pub use prompt::{PromptComplexity, PromptError, PromptRole, PromptSet};
pub use scoring::{
    BundleScorer, BundleScores, Decision, ScoreError, ScoreParams, ScoringRule, SequentialScorer,
    SimilarityRow,
};
pub use synth::{OodPromptPlacement, PerturbTarget, SynthConfig, SynthError};

/// Default TPR operating point for FPR@TPR.
pub const DEFAULT_TPR_TARGET: f64 = 0.95;

//! File formats, reports, parallel scoring and sweep configuration on top of
//! `oodkit-core`. The `oodkit` binary is a thin layer over this crate.

pub mod parallel;
pub mod prompts;
pub mod report;
pub mod store;
pub mod sweep_config;

pub use parallel::ParallelScorer;
pub use store::{read_bundle, write_bundle, BundleError};
pub use sweep_config::{run_sweep, SweepSpec};

//! Row-parallel bundle scoring on a bounded thread pool.

use oodkit_core::scoring::score_bundle_with;
use oodkit_core::{Bundle, BundleScorer, BundleScores, ScoreError, ScoreParams, ScoringRule};
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuildError, ThreadPoolBuilder};

/// Scores rows on a dedicated pool of `jobs` threads.
///
/// Each row's score is computed by the same sequential code as
/// [`oodkit_core::SequentialScorer`] and collected in row order, so the
/// output does not depend on `jobs`.
pub struct ParallelScorer {
    pool: ThreadPool,
}

impl ParallelScorer {
    pub fn new(jobs: usize) -> Result<Self, ThreadPoolBuildError> {
        let pool = ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
        Ok(Self { pool })
    }

    pub fn jobs(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl BundleScorer for ParallelScorer {
    fn score_bundle(&self, bundle: &Bundle, rule: ScoringRule, params: &ScoreParams) -> Result<BundleScores, ScoreError> {
        score_bundle_with(bundle, rule, params, |scorer, m| {
            self.pool.install(|| {
                m.values()
                    .par_chunks_exact(m.dim())
                    .with_min_len(64)
                    .map(|row| scorer.score_row(row))
                    .collect()
            })
        })
    }
}

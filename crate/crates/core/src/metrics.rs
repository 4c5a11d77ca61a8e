//! Exact detection metrics.
//!
//! A sample is called ID when its score is `>= threshold`. AUROC is the
//! Mann-Whitney statistic with ties counted one half:
//!
//! ```text
//! AUROC = (#{(i, j): id_i > ood_j} + 0.5 * #{(i, j): id_i = ood_j}) / (n_id * n_ood)
//! ```
//!
//! It is computed exactly by sorting the OOD scores and binary-searching each
//! ID score, accumulating integer pair counts. FPR@TPR uses an empirical
//! threshold drawn from the ID scores, with no interpolation between ROC
//! points.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::scoring::{ScoreParams, ScoringRule};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("{0} scores are empty")]
    Empty(&'static str),
    #[error("{0} scores contain a non-finite value")]
    NonFinite(&'static str),
    #[error("TPR target must lie in (0, 1], got {0}")]
    TprTarget(f64),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least 2 points for a correlation, got {0}")]
    TooFewPoints(usize),
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
}

/// Scores for one population under one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    /// `"id"` or the OOD dataset name.
    pub population: String,
    pub values: Vec<f64>,
    pub rule: ScoringRule,
    pub params: ScoreParams,
}

impl ScoreVector {
    pub fn check(&self) -> Result<(), MetricError> {
        check_scores(&self.values, "score vector")
    }
}

/// AUROC and FPR at the configured TPR operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub auroc: f64,
    pub fpr95: f64,
    pub threshold_at_tpr95: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

fn check_scores(xs: &[f64], which: &'static str) -> Result<(), MetricError> {
    if xs.is_empty() {
        return Err(MetricError::Empty(which));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite(which));
    }
    Ok(())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Twice the Mann-Whitney U statistic: `2·#{id > ood} + #{id = ood}`.
fn doubled_u(id: &[f64], ood_sorted: &[f64]) -> u128 {
    id.iter()
        .map(|&x| {
            let below = ood_sorted.partition_point(|&o| o < x);
            let not_above = ood_sorted.partition_point(|&o| o <= x);
            2 * below as u128 + (not_above - below) as u128
        })
        .sum()
}

pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64, MetricError> {
    check_scores(id, "ID")?;
    check_scores(ood, "OOD")?;
    let u2 = doubled_u(id, &sorted(ood));
    let pairs = id.len() as u128 * ood.len() as u128;
    Ok(u2 as f64 / (2 * pairs) as f64)
}

/// Returns `(fpr, threshold)`: the threshold is the largest ID score `λ`
/// with `#{id >= λ} / n_id >= tpr_target`, and `fpr = #{ood >= λ} / n_ood`.
pub fn fpr_at_tpr(id: &[f64], ood: &[f64], tpr_target: f64) -> Result<(f64, f64), MetricError> {
    check_scores(id, "ID")?;
    check_scores(ood, "OOD")?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(MetricError::TprTarget(tpr_target));
    }
    let mut desc = sorted(id);
    desc.reverse();
    let n_id = desc.len() as f64;
    let mut threshold = desc[desc.len() - 1];
    let mut i = 0;
    while i < desc.len() {
        let lambda = desc[i];
        // include every tie of lambda in the count
        let mut j = i + 1;
        while j < desc.len() && desc[j] == lambda {
            j += 1;
        }
        if j as f64 / n_id >= tpr_target {
            threshold = lambda;
            break;
        }
        i = j;
    }
    let ood_sorted = sorted(ood);
    let at_or_above = ood_sorted.len() - ood_sorted.partition_point(|&o| o < threshold);
    Ok((at_or_above as f64 / ood_sorted.len() as f64, threshold))
}

/// AUROC plus FPR at `tpr_target` for one ID / OOD pair.
pub fn evaluate(id: &[f64], ood: &[f64], tpr_target: f64) -> Result<MetricResult, MetricError> {
    let auroc = auroc(id, ood)?;
    let (fpr, threshold) = fpr_at_tpr(id, ood, tpr_target)?;
    Ok(MetricResult { auroc, fpr95: fpr, threshold_at_tpr95: threshold, n_id: id.len(), n_ood: ood.len() })
}

/// Sample Pearson correlation, computed in two passes.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::Length(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooFewPoints(x.len()));
    }
    check_scores(x, "x")?;
    check_scores(y, "y")?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

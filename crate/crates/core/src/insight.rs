//! Embedding-space property checks.
//!
//! Three summaries, each computed from sample statistics over a bundle:
//!
//! * [`check_alignment`]: ID images against their own class prompt versus
//!   the best wrong-class prompt.
//! * [`check_contrast`]: the best-ID-prompt statistic `S_ID` for ID images
//!   versus each OOD dataset, both as the temperature-scaled MCM score and as
//!   the raw maximum cosine.
//! * [`check_separation`]: AUROC of the ID-only score versus the ID+OOD
//!   score per OOD dataset.
//!
//! Reports carry sample sizes and standard deviations and never assert the
//! inequalities themselves. Every statistic is computed from sorted values,
//! so reports are bit-identical under any permutation of image rows.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::{Bundle, Violation};
use crate::metrics::{evaluate, MetricError};
use crate::scoring::{
    BundleScorer, PromptBank, ScoreError, ScoreParams, ScoringRule, SequentialScorer,
};
use crate::DEFAULT_TPR_TARGET;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InsightError {
    #[error("bundle has no ID labels")]
    MissingLabels,
    #[error("need at least 2 ID classes, bundle has K = {0}")]
    TooFewClasses(usize),
    #[error("bundle has no OOD prompts (M = 0)")]
    NoOodPrompts,
    #[error("bundle has no OOD datasets")]
    NoOodData,
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("coverage must lie in (0, 1], got {0}")]
    Coverage(f64),
    #[error("bundle is invalid ({} violations, first: {})", .0.len(), .0[0])]
    InvalidBundle(Vec<Violation>),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsightConfig {
    /// Equal-width histogram bins over the observed range.
    pub bins: usize,
    /// Coverage level for the OOD `S_ID` quantile.
    pub coverage: f64,
    pub tpr_target: f64,
}

impl Default for InsightConfig {
    fn default() -> Self {
        Self { bins: 50, coverage: 0.95, tpr_target: DEFAULT_TPR_TARGET }
    }
}

impl InsightConfig {
    fn check(&self) -> Result<(), InsightError> {
        if self.bins == 0 {
            return Err(InsightError::NoBins);
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return Err(InsightError::Coverage(self.coverage));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    fn from_sorted(sorted: &[f64]) -> Self {
        let (mean, std) = crate::numeric::mean_std(sorted);
        Self {
            n: sorted.len(),
            mean,
            std,
            min: sorted.first().copied().unwrap_or(f64::NAN),
            max: sorted.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// Equal-width histogram. The last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], lower: f64, upper: f64, bins: usize) -> Self {
        let mut counts = alloc::vec![0u64; bins];
        let width = (upper - lower) / bins as f64;
        for &v in values {
            let idx = if width > 0.0 {
                (((v - lower) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[idx] += 1;
        }
        Self { lower, upper, counts }
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let width = (self.upper - self.lower) / self.counts.len() as f64;
        let hi = if i + 1 == self.counts.len() { self.upper } else { self.lower + width * (i + 1) as f64 };
        (self.lower + width * i as f64, hi)
    }
}

/// Summary, histogram and sorted values (the empirical CDF) of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub summary: Summary,
    pub histogram: Histogram,
    pub cdf: Vec<f64>,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Builds distributions for several samples over one shared histogram range.
fn distributions<'a, I>(samples: I, bins: usize) -> Vec<Distribution>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let cdfs: Vec<Vec<f64>> = samples.into_iter().map(sorted).collect();
    let lower = cdfs.iter().filter_map(|c| c.first()).copied().fold(f64::INFINITY, f64::min);
    let upper = cdfs.iter().filter_map(|c| c.last()).copied().fold(f64::NEG_INFINITY, f64::max);
    cdfs.into_iter()
        .map(|cdf| Distribution {
            summary: Summary::from_sorted(&cdf),
            histogram: Histogram::new(&cdf, lower, upper, bins),
            cdf,
        })
        .collect()
}

/// Empirical quantile: the smallest sample value `x` with `F(x) >= q`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = libm::ceil(q * n as f64) as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub n: usize,
    pub k: usize,
    pub mean_true_class_sim: f64,
    pub mean_max_wrong_class_sim: f64,
    /// Fraction of ID images whose true-class similarity strictly exceeds
    /// their best wrong-class similarity.
    pub fraction_above_diagonal: f64,
    pub true_class: Distribution,
    pub max_wrong_class: Distribution,
}

fn ensure_valid(bundle: &Bundle) -> Result<(), InsightError> {
    let v = bundle.validate();
    if v.is_empty() {
        Ok(())
    } else {
        Err(InsightError::InvalidBundle(v))
    }
}

/// Per-image `(true-class similarity, best wrong-class similarity)`.
pub fn alignment_pairs(bundle: &Bundle) -> Result<Vec<(f64, f64)>, InsightError> {
    let labels = bundle.id_labels.as_ref().ok_or(InsightError::MissingLabels)?;
    if bundle.k() < 2 {
        return Err(InsightError::TooFewClasses(bundle.k()));
    }
    let bank = PromptBank::from_matrix(bundle.id_prompts.clone(), bundle.k())?;
    bundle
        .id_images
        .iter_rows()
        .zip(labels)
        .map(|(img, &label)| {
            let sims = bank.similarities(img)?;
            let label = label as usize;
            let wrong = sims
                .id_values()
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != label)
                .map(|(_, &s)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            Ok((sims.values[label], wrong))
        })
        .collect()
}

pub fn check_alignment(bundle: &Bundle, config: &InsightConfig) -> Result<AlignmentReport, InsightError> {
    config.check()?;
    ensure_valid(bundle)?;
    let pairs = alignment_pairs(bundle)?;
    let above = pairs.iter().filter(|(t, w)| t > w).count();
    let (truth, wrong): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let mut d = distributions([truth.as_slice(), wrong.as_slice()], config.bins).into_iter();
    let true_class = d.next().expect("two samples");
    let max_wrong_class = d.next().expect("two samples");
    Ok(AlignmentReport {
        n: pairs.len(),
        k: bundle.k(),
        mean_true_class_sim: true_class.summary.mean,
        mean_max_wrong_class_sim: max_wrong_class.summary.mean,
        fraction_above_diagonal: above as f64 / pairs.len() as f64,
        true_class,
        max_wrong_class,
    })
}

/// `S_ID` statistics for one variant across the ID population and each OOD
/// dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastStats {
    pub id: Distribution,
    pub ood: BTreeMap<String, Distribution>,
    /// Empirical quantile of each OOD dataset's `S_ID` at the configured
    /// coverage: a candidate threshold below which that share of OOD lies.
    pub ood_quantile: BTreeMap<String, f64>,
    /// Share of ID images scoring strictly above each OOD quantile.
    pub id_above_ood_quantile: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub tau: f64,
    pub coverage: f64,
    /// Mean MCM score over ID images.
    pub mean_sid_id: f64,
    /// Mean MCM score per OOD dataset.
    pub mean_sid_ood: BTreeMap<String, f64>,
    /// `mean_sid_id - mean_sid_ood` per dataset.
    pub margin: BTreeMap<String, f64>,
    pub mcm: ContrastStats,
    pub raw_max_cosine: ContrastStats,
}

fn contrast_stats(id: &[f64], ood: &BTreeMap<String, Vec<f64>>, config: &InsightConfig) -> ContrastStats {
    let samples = core::iter::once(id).chain(ood.values().map(Vec::as_slice));
    let mut d = distributions(samples, config.bins).into_iter();
    let id_dist = d.next().expect("ID sample");
    let ood_dists: BTreeMap<String, Distribution> = ood.keys().cloned().zip(d).collect();
    let mut ood_quantile = BTreeMap::new();
    let mut id_above = BTreeMap::new();
    for (name, dist) in &ood_dists {
        let q = quantile(&dist.cdf, config.coverage);
        let above = id_dist.cdf.len() - id_dist.cdf.partition_point(|&x| x <= q);
        ood_quantile.insert(name.clone(), q);
        id_above.insert(name.clone(), above as f64 / id_dist.cdf.len() as f64);
    }
    ContrastStats { id: id_dist, ood: ood_dists, ood_quantile, id_above_ood_quantile: id_above }
}

fn raw_max_cosine(bank: &PromptBank, m: &crate::EmbeddingMatrix) -> Result<Vec<f64>, ScoreError> {
    m.iter_rows().map(|r| Ok(bank.similarities(r)?.max_id())).collect()
}

pub fn check_contrast(bundle: &Bundle, params: &ScoreParams, config: &InsightConfig) -> Result<ContrastReport, InsightError> {
    check_contrast_with(&SequentialScorer, bundle, params, config)
}

pub fn check_contrast_with<S: BundleScorer + ?Sized>(
    scorer: &S,
    bundle: &Bundle,
    params: &ScoreParams,
    config: &InsightConfig,
) -> Result<ContrastReport, InsightError> {
    config.check()?;
    ensure_valid(bundle)?;
    let mcm = scorer.score_bundle(bundle, ScoringRule::Id, params)?;
    let bank = PromptBank::from_matrix(bundle.id_prompts.clone(), bundle.k())?;
    let raw_id = raw_max_cosine(&bank, &bundle.id_images)?;
    let raw_ood = bundle
        .ood_images
        .iter()
        .map(|(name, m)| Ok((name.clone(), raw_max_cosine(&bank, m)?)))
        .collect::<Result<BTreeMap<_, _>, ScoreError>>()?;

    let mcm_stats = contrast_stats(&mcm.id, &mcm.ood, config);
    let raw_stats = contrast_stats(&raw_id, &raw_ood, config);
    let mean_sid_id = mcm_stats.id.summary.mean;
    let mean_sid_ood: BTreeMap<String, f64> =
        mcm_stats.ood.iter().map(|(k, d)| (k.clone(), d.summary.mean)).collect();
    let margin = mean_sid_ood.iter().map(|(k, &v)| (k.clone(), mean_sid_id - v)).collect();
    Ok(ContrastReport {
        tau: params.tau,
        coverage: config.coverage,
        mean_sid_id,
        mean_sid_ood,
        margin,
        mcm: mcm_stats,
        raw_max_cosine: raw_stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationEntry {
    pub auroc_id_only: f64,
    pub auroc_id_ood: f64,
    /// `auroc_id_ood - auroc_id_only`.
    pub delta: f64,
    pub fpr95_id_only: f64,
    pub fpr95_id_ood: f64,
    /// Mean of `max ID cosine - max OOD cosine` over this OOD dataset.
    pub mean_gap_ood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub tau: f64,
    /// Averages over OOD datasets.
    pub auroc_id_only: f64,
    pub auroc_id_ood_mean: f64,
    pub delta: f64,
    /// Mean of `max ID cosine - max OOD cosine` over ID images.
    pub mean_gap_id: f64,
    pub auroc_id_ood: BTreeMap<String, SeparationEntry>,
    /// Score distributions keyed by rule name, then population (`id` or
    /// dataset name).
    pub scores: BTreeMap<String, BTreeMap<String, Distribution>>,
}

fn mean_gap(bank: &PromptBank, m: &crate::EmbeddingMatrix) -> Result<f64, ScoreError> {
    let mut gaps = m
        .iter_rows()
        .map(|r| {
            let s = bank.similarities(r)?;
            let ood_max = s.ood_values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(s.max_id() - ood_max)
        })
        .collect::<Result<Vec<f64>, ScoreError>>()?;
    gaps.sort_by(f64::total_cmp);
    Ok(crate::numeric::mean_std(&gaps).0)
}

pub fn check_separation(bundle: &Bundle, params: &ScoreParams, config: &InsightConfig) -> Result<SeparationReport, InsightError> {
    check_separation_with(&SequentialScorer, bundle, params, config)
}

pub fn check_separation_with<S: BundleScorer + ?Sized>(
    scorer: &S,
    bundle: &Bundle,
    params: &ScoreParams,
    config: &InsightConfig,
) -> Result<SeparationReport, InsightError> {
    config.check()?;
    ensure_valid(bundle)?;
    if bundle.m() == 0 {
        return Err(InsightError::NoOodPrompts);
    }
    if bundle.ood_images.is_empty() {
        return Err(InsightError::NoOodData);
    }
    let id_only = scorer.score_bundle(bundle, ScoringRule::Id, params)?;
    let id_ood = scorer.score_bundle(bundle, ScoringRule::IdOod, params)?;
    let bank = PromptBank::new(&bundle.id_prompts, &bundle.ood_prompts)?;

    let mut entries = BTreeMap::new();
    for (name, m) in &bundle.ood_images {
        let a = evaluate(&id_only.id, &id_only.ood[name], config.tpr_target)?;
        let b = evaluate(&id_ood.id, &id_ood.ood[name], config.tpr_target)?;
        entries.insert(
            name.clone(),
            SeparationEntry {
                auroc_id_only: a.auroc,
                auroc_id_ood: b.auroc,
                delta: b.auroc - a.auroc,
                fpr95_id_only: a.fpr95,
                fpr95_id_ood: b.fpr95,
                mean_gap_ood: mean_gap(&bank, m)?,
            },
        );
    }
    let n = entries.len() as f64;
    let auroc_id_only = entries.values().map(|e| e.auroc_id_only).sum::<f64>() / n;
    let auroc_id_ood_mean = entries.values().map(|e| e.auroc_id_ood).sum::<f64>() / n;

    let mut scores = BTreeMap::new();
    for s in [&id_only, &id_ood] {
        let samples = core::iter::once(s.id.as_slice()).chain(s.ood.values().map(Vec::as_slice));
        let names = core::iter::once("id".to_string()).chain(s.ood.keys().cloned());
        scores.insert(s.rule.name().to_string(), names.zip(distributions(samples, config.bins)).collect());
    }

    Ok(SeparationReport {
        tau: params.tau,
        auroc_id_only,
        auroc_id_ood_mean,
        delta: auroc_id_ood_mean - auroc_id_only,
        mean_gap_id: mean_gap(&bank, &bundle.id_images)?,
        auroc_id_ood: entries,
        scores,
    })
}

/// What a [`DistributionRow`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// `x0..x1` is a bin, `y` its count.
    Hist,
    /// `x0 = x1` is the i-th smallest value, `y = (i + 1) / n`.
    Cdf,
}

/// One row of the plotting export, in long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub report: &'static str,
    pub population: String,
    pub series: String,
    pub kind: RowKind,
    pub index: usize,
    pub x0: f64,
    pub x1: f64,
    pub y: f64,
}

/// Reports that can be flattened into plot-ready rows.
pub trait DistributionExport {
    fn distribution_rows(&self) -> Vec<DistributionRow>;
}

fn push_distribution(out: &mut Vec<DistributionRow>, report: &'static str, population: &str, series: &str, d: &Distribution) {
    for (i, &count) in d.histogram.counts.iter().enumerate() {
        let (x0, x1) = d.histogram.bin_edges(i);
        out.push(DistributionRow {
            report,
            population: population.to_string(),
            series: series.to_string(),
            kind: RowKind::Hist,
            index: i,
            x0,
            x1,
            y: count as f64,
        });
    }
    let n = d.cdf.len() as f64;
    for (i, &x) in d.cdf.iter().enumerate() {
        out.push(DistributionRow {
            report,
            population: population.to_string(),
            series: series.to_string(),
            kind: RowKind::Cdf,
            index: i,
            x0: x,
            x1: x,
            y: (i + 1) as f64 / n,
        });
    }
}

impl DistributionExport for AlignmentReport {
    fn distribution_rows(&self) -> Vec<DistributionRow> {
        let mut out = Vec::new();
        push_distribution(&mut out, "alignment", "id", "true_class_sim", &self.true_class);
        push_distribution(&mut out, "alignment", "id", "max_wrong_class_sim", &self.max_wrong_class);
        out
    }
}

impl DistributionExport for ContrastReport {
    fn distribution_rows(&self) -> Vec<DistributionRow> {
        let mut out = Vec::new();
        for (series, stats) in [("sid_mcm", &self.mcm), ("sid_raw_max_cosine", &self.raw_max_cosine)] {
            push_distribution(&mut out, "contrast", "id", series, &stats.id);
            for (name, d) in &stats.ood {
                push_distribution(&mut out, "contrast", name, series, d);
            }
        }
        out
    }
}

impl DistributionExport for SeparationReport {
    fn distribution_rows(&self) -> Vec<DistributionRow> {
        let mut out = Vec::new();
        for (rule, pops) in &self.scores {
            for (population, d) in pops {
                push_distribution(&mut out, "separation", population, rule, d);
            }
        }
        out
    }
}

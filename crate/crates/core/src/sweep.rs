//! Experimental procedures over one bundle per sweep point.
//!
//! Every procedure scores through a [`BundleScorer`], so callers choose the
//! execution strategy; the report is assembled in input order and does not
//! depend on it. Each [`ReportRow`] names its point (and through it the
//! bundle digest), the rule and the temperature used, so any metric can be
//! recomputed from scratch.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::Bundle;
use crate::metrics::{evaluate, pearson_r, MetricError, MetricResult};
use crate::prompt::{complexity, prompt_set_distance, PromptError, PromptSet};
use crate::scoring::{BundleScorer, ScoreError, ScoreParams, ScoringRule};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Default temperature grid for [`run_temperature_sweep`].
pub const DEFAULT_TAUS: [f64; 6] = [0.001, 0.01, 0.1, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Comparison,
    Severity,
    PromptVariation,
    PromptComplexity,
    Temperature,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Comparison => "comparison",
            Self::Severity => "severity",
            Self::PromptVariation => "prompt-variation",
            Self::PromptComplexity => "prompt-complexity",
            Self::Temperature => "temperature",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SweepError {
    #[error("a sweep needs at least one point")]
    NoPoints,
    #[error("a sweep needs at least one scoring rule")]
    NoRules,
    #[error("corruption {0:?} has no clean (severity 0) baseline")]
    MissingBaseline(String),
    #[error("corruption {corruption:?}: severities must start at 0 and strictly increase ({previous} then {next})")]
    SeverityOrder { corruption: String, previous: f64, next: f64 },
    #[error("severity must be finite and >= 0, got {0}")]
    InvalidSeverity(f64),
    #[error("variant {0:?} changes image embeddings")]
    ImagesChanged(String),
    #[error("variant {0:?} changes OOD prompts")]
    OodPromptsChanged(String),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("point {point:?}: {source}")]
    Score { point: String, source: ScoreError },
    #[error("point {point:?}: {source}")]
    Metric { point: String, source: MetricError },
    #[error("point {point:?}: {source}")]
    Prompt { point: String, source: PromptError },
    #[error("correlation: {0}")]
    Correlation(MetricError),
}

/// One sweep point: a bundle plus its position on the sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointInfo {
    pub index: usize,
    pub label: String,
    /// Curve the point belongs to (corruption type), if any.
    pub series: Option<String>,
    pub axis: Option<f64>,
    /// SHA-256 of the bundle's canonical content.
    pub bundle_digest: String,
    /// Derived per-point quantities (distance, complexity, log10 tau, ...).
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub point: usize,
    pub rule: ScoringRule,
    pub tau: f64,
    pub dataset: String,
    pub metrics: MetricResult,
}

/// Arithmetic mean over OOD datasets for one (point, rule, tau).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub point: usize,
    pub rule: ScoringRule,
    pub tau: f64,
    pub auroc: f64,
    pub fpr95: f64,
    pub datasets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub kind: SweepKind,
    pub axis_name: Option<String>,
    pub params: ScoreParams,
    pub tpr_target: f64,
    pub points: Vec<PointInfo>,
    pub rows: Vec<ReportRow>,
    pub averages: Vec<AverageRow>,
    pub statistics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    fn new(kind: SweepKind, axis_name: Option<&str>, params: &ScoreParams, tpr_target: f64) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            kind,
            axis_name: axis_name.map(str::to_string),
            params: *params,
            tpr_target,
            points: Vec::new(),
            rows: Vec::new(),
            averages: Vec::new(),
            statistics: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    fn push_point(&mut self, label: &str, series: Option<&str>, axis: Option<f64>, bundle: &Bundle) -> usize {
        let index = self.points.len();
        self.points.push(PointInfo {
            index,
            label: label.to_string(),
            series: series.map(str::to_string),
            axis,
            bundle_digest: bundle.content_digest_hex(),
            extra: BTreeMap::new(),
        });
        index
    }

    /// Scores one bundle under one rule, appends its rows and average, and
    /// returns the average.
    fn evaluate_point<S: BundleScorer + ?Sized>(
        &mut self,
        scorer: &S,
        point: usize,
        bundle: &Bundle,
        rule: ScoringRule,
        params: &ScoreParams,
    ) -> Result<AverageRow, SweepError> {
        let label = &self.points[point].label;
        let scores = scorer
            .score_bundle(bundle, rule, params)
            .map_err(|source| SweepError::Score { point: label.clone(), source })?;
        let (mut auroc_sum, mut fpr_sum) = (0.0, 0.0);
        for (dataset, ood) in &scores.ood {
            let metrics = evaluate(&scores.id, ood, self.tpr_target)
                .map_err(|source| SweepError::Metric { point: label.clone(), source })?;
            auroc_sum += metrics.auroc;
            fpr_sum += metrics.fpr95;
            self.rows.push(ReportRow { point, rule, tau: params.tau, dataset: dataset.clone(), metrics });
        }
        let n = scores.ood.len();
        let avg = AverageRow {
            point,
            rule,
            tau: params.tau,
            auroc: auroc_sum / n as f64,
            fpr95: fpr_sum / n as f64,
            datasets: n,
        };
        self.averages.push(avg.clone());
        Ok(avg)
    }

    /// Rows belonging to one point.
    pub fn rows_for(&self, point: usize) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.point == point)
    }

    /// The average row for a (point, rule), first match.
    pub fn average(&self, point: usize, rule: ScoringRule) -> Option<&AverageRow> {
        self.averages.iter().find(|a| a.point == point && a.rule == rule)
    }
}

fn check_common(points: usize, rules: &[ScoringRule], params: &ScoreParams) -> Result<(), SweepError> {
    if points == 0 {
        return Err(SweepError::NoPoints);
    }
    if rules.is_empty() {
        return Err(SweepError::NoRules);
    }
    params.check().map_err(|source| SweepError::Score { point: String::new(), source })
}

/// AUROC and FPR per (bundle, rule, OOD dataset) plus per-rule averages.
pub fn run_comparison<S: BundleScorer + ?Sized>(
    scorer: &S,
    bundles: &[(&str, &Bundle)],
    rules: &[ScoringRule],
    params: &ScoreParams,
    tpr_target: f64,
) -> Result<EvalReport, SweepError> {
    check_common(bundles.len(), rules, params)?;
    let mut report = EvalReport::new(SweepKind::Comparison, None, params, tpr_target);
    for &(label, bundle) in bundles {
        let point = report.push_point(label, None, None, bundle);
        for &rule in rules {
            report.evaluate_point(scorer, point, bundle, rule, params)?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy)]
pub struct SeverityPoint<'a> {
    pub corruption: &'a str,
    pub severity: f64,
    pub bundle: &'a Bundle,
}

/// AUROC against severity, one curve per corruption type.
///
/// Within a corruption, points must be listed in strictly increasing severity
/// starting from the clean baseline at 0. Curves are reported in order of
/// first appearance. Statistics carry `<corruption>.baseline_auroc` (the
/// severity-0 average for the first rule) and `<corruption>.auroc_drop`
/// (baseline minus the highest-severity average).
pub fn run_severity_sweep<S: BundleScorer + ?Sized>(
    scorer: &S,
    points: &[SeverityPoint<'_>],
    rules: &[ScoringRule],
    params: &ScoreParams,
    tpr_target: f64,
) -> Result<EvalReport, SweepError> {
    check_common(points.len(), rules, params)?;
    let mut order: Vec<&str> = Vec::new();
    let mut last: BTreeMap<&str, f64> = BTreeMap::new();
    for p in points {
        if !(p.severity >= 0.0 && p.severity.is_finite()) {
            return Err(SweepError::InvalidSeverity(p.severity));
        }
        match last.get(p.corruption) {
            None if p.severity != 0.0 => return Err(SweepError::MissingBaseline(p.corruption.to_string())),
            None => order.push(p.corruption),
            Some(&prev) if p.severity <= prev => {
                return Err(SweepError::SeverityOrder {
                    corruption: p.corruption.to_string(),
                    previous: prev,
                    next: p.severity,
                })
            }
            Some(_) => {}
        }
        last.insert(p.corruption, p.severity);
    }

    let mut report = EvalReport::new(SweepKind::Severity, Some("severity"), params, tpr_target);
    for corruption in order {
        let mut curve = Vec::new();
        for p in points.iter().filter(|p| p.corruption == corruption) {
            let label = format!("{corruption}@{}", p.severity);
            let point = report.push_point(&label, Some(corruption), Some(p.severity), p.bundle);
            let mut first = None;
            for &rule in rules {
                let avg = report.evaluate_point(scorer, point, p.bundle, rule, params)?;
                first.get_or_insert(avg.auroc);
            }
            curve.push(first.expect("rules is non-empty"));
        }
        let baseline = curve[0];
        report.statistics.insert(format!("{corruption}.baseline_auroc"), baseline);
        report.statistics.insert(format!("{corruption}.auroc_drop"), baseline - curve[curve.len() - 1]);
    }
    Ok(report)
}

/// ΔAUROC of each ID prompt variant against the baseline, paired with the
/// prompt-set distance, and the Pearson correlation over the variants.
///
/// Point 0 is the baseline itself. ΔAUROC is the variant's average AUROC over
/// OOD datasets minus the baseline's, under `rule`.
pub fn run_prompt_variation<S: BundleScorer + ?Sized>(
    scorer: &S,
    baseline: &Bundle,
    variants: &[(&str, &Bundle)],
    rule: ScoringRule,
    params: &ScoreParams,
    tpr_target: f64,
) -> Result<EvalReport, SweepError> {
    check_common(variants.len(), &[rule], params)?;
    for &(label, v) in variants {
        if !v.same_images(baseline) {
            return Err(SweepError::ImagesChanged(label.to_string()));
        }
        if !v.ood_prompts.bit_eq(&baseline.ood_prompts) {
            return Err(SweepError::OodPromptsChanged(label.to_string()));
        }
    }
    let mut report = EvalReport::new(SweepKind::PromptVariation, Some("prompt_set_distance"), params, tpr_target);
    let base_point = report.push_point("baseline", None, Some(0.0), baseline);
    let base = report.evaluate_point(scorer, base_point, baseline, rule, params)?.auroc;
    report.points[base_point].extra.insert("delta_auroc".into(), 0.0);

    let (mut distances, mut deltas) = (Vec::new(), Vec::new());
    for &(label, v) in variants {
        let distance = prompt_set_distance(&baseline.id_prompts, &v.id_prompts)
            .map_err(|source| SweepError::Prompt { point: label.to_string(), source })?;
        let point = report.push_point(label, None, Some(distance), v);
        let delta = report.evaluate_point(scorer, point, v, rule, params)?.auroc - base;
        report.points[point].extra.insert("delta_auroc".into(), delta);
        distances.push(distance);
        deltas.push(delta);
    }
    let r = pearson_r(&distances, &deltas).map_err(SweepError::Correlation)?;
    report.statistics.insert("pearson_r".into(), r);
    Ok(report)
}

/// Metrics against OOD prompt complexity, sorted by average word count
/// (stable, so equal counts keep their input order).
pub fn run_complexity_sweep<S: BundleScorer + ?Sized>(
    scorer: &S,
    points: &[(&str, &PromptSet, &Bundle)],
    rules: &[ScoringRule],
    params: &ScoreParams,
    tpr_target: f64,
) -> Result<EvalReport, SweepError> {
    check_common(points.len(), rules, params)?;
    let mut measured = Vec::with_capacity(points.len());
    for &(label, prompts, bundle) in points {
        let c = complexity(prompts).map_err(|source| SweepError::Prompt { point: label.to_string(), source })?;
        measured.push((label, c, bundle));
    }
    measured.sort_by(|a, b| a.1.avg_word_count.total_cmp(&b.1.avg_word_count));

    let mut report = EvalReport::new(SweepKind::PromptComplexity, Some("avg_word_count"), params, tpr_target);
    for (label, c, bundle) in measured {
        let point = report.push_point(label, None, Some(c.avg_word_count), bundle);
        let extra = &mut report.points[point].extra;
        extra.insert("avg_word_count".into(), c.avg_word_count);
        extra.insert("unique_word_ratio".into(), c.unique_word_ratio);
        for &rule in rules {
            report.evaluate_point(scorer, point, bundle, rule, params)?;
        }
    }
    Ok(report)
}

/// `score_id` and `score_id_ood` metrics at each temperature, ascending.
/// Repeated temperatures are evaluated once and reported as warnings.
pub fn run_temperature_sweep<S: BundleScorer + ?Sized>(
    scorer: &S,
    bundle: &Bundle,
    taus: &[f64],
    params: &ScoreParams,
    tpr_target: f64,
) -> Result<EvalReport, SweepError> {
    if taus.is_empty() {
        return Err(SweepError::NoPoints);
    }
    if let Some(&bad) = taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(SweepError::InvalidTemperature(bad));
    }
    let mut report = EvalReport::new(SweepKind::Temperature, Some("tau"), params, tpr_target);
    let mut seen = BTreeSet::new();
    let mut grid = Vec::new();
    for &t in taus {
        if seen.insert(t.to_bits()) {
            grid.push(t);
        } else {
            report.warnings.push(format!("duplicate tau {t} ignored"));
        }
    }
    grid.sort_by(f64::total_cmp);
    for tau in grid {
        let point_params = ScoreParams { tau, ..*params };
        let point = report.push_point(&format!("tau={tau}"), None, Some(tau), bundle);
        report.points[point].extra.insert("log10_tau".into(), libm::log10(tau));
        for rule in [ScoringRule::Id, ScoringRule::IdOod] {
            report.evaluate_point(scorer, point, bundle, rule, &point_params)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingMatrix;
    use crate::metrics::auroc;
    use crate::prompt::load_ood_prompts;
    use crate::scoring::{score_bundle, SequentialScorer};
    use crate::synth::{generate, perturb_embeddings, PerturbTarget, SynthConfig};

    const TPR: f64 = 0.95;

    fn bundle() -> Bundle {
        generate(&SynthConfig { dim: 16, k: 4, m: 4, n_id: 60, n_ood: 40, ..Default::default() }).unwrap()
    }

    #[test]
    fn comparison_rows_and_averages() {
        let b = bundle();
        let rules = [ScoringRule::Id, ScoringRule::IdOod];
        let r = run_comparison(&SequentialScorer, &[("synthetic", &b)], &rules, &ScoreParams::default(), TPR).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.averages.len(), 2);
        for avg in &r.averages {
            let rows: Vec<_> = r.rows.iter().filter(|x| x.rule == avg.rule).collect();
            let mean = rows.iter().map(|x| x.metrics.auroc).sum::<f64>() / rows.len() as f64;
            assert!((avg.auroc - mean).abs() < 1e-12);
        }
        // provenance closure: recompute one row directly
        let row = &r.rows[3];
        let s = score_bundle(&b, row.rule, &ScoreParams::with_tau(row.tau)).unwrap();
        assert_eq!(auroc(&s.id, &s.ood[&row.dataset]).unwrap(), row.metrics.auroc);
        assert_eq!(r.points[0].bundle_digest, b.content_digest_hex());
    }

    #[test]
    fn comparison_needs_logits_for_baselines() {
        let b = bundle();
        let err = run_comparison(&SequentialScorer, &[("b", &b)], &[ScoringRule::Msp], &ScoreParams::default(), TPR);
        assert!(matches!(err, Err(SweepError::Score { source: ScoreError::MissingLogits(_), .. })));
        assert_eq!(
            run_comparison(&SequentialScorer, &[], &[ScoringRule::Id], &ScoreParams::default(), TPR),
            Err(SweepError::NoPoints)
        );
    }

    #[test]
    fn severity_flat_when_points_identical() {
        let b = bundle();
        let pts: Vec<_> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&severity| SeverityPoint { corruption: "none", severity, bundle: &b })
            .collect();
        let r = run_severity_sweep(&SequentialScorer, &pts, &[ScoringRule::IdOod], &ScoreParams::default(), TPR).unwrap();
        assert!(r.averages.windows(2).all(|w| w[0].auroc == w[1].auroc));
        assert_eq!(r.statistics["none.auroc_drop"], 0.0);
    }

    #[test]
    fn severity_two_curves_and_errors() {
        let b = bundle();
        let noisy = perturb_embeddings(&b, PerturbTarget::Images, 0.5, 1).unwrap();
        let pts = [
            SeverityPoint { corruption: "img", severity: 0.0, bundle: &b },
            SeverityPoint { corruption: "txt", severity: 0.0, bundle: &b },
            SeverityPoint { corruption: "img", severity: 0.5, bundle: &noisy },
        ];
        let r = run_severity_sweep(&SequentialScorer, &pts, &[ScoringRule::IdOod], &ScoreParams::default(), TPR).unwrap();
        let series: Vec<_> = r.points.iter().map(|p| p.series.as_deref().unwrap()).collect();
        assert_eq!(series, ["img", "img", "txt"]);

        let missing = [SeverityPoint { corruption: "img", severity: 0.25, bundle: &b }];
        assert_eq!(
            run_severity_sweep(&SequentialScorer, &missing, &[ScoringRule::IdOod], &ScoreParams::default(), TPR),
            Err(SweepError::MissingBaseline("img".into()))
        );
        let repeated = [
            SeverityPoint { corruption: "img", severity: 0.0, bundle: &b },
            SeverityPoint { corruption: "img", severity: 0.0, bundle: &b },
        ];
        assert!(matches!(
            run_severity_sweep(&SequentialScorer, &repeated, &[ScoringRule::IdOod], &ScoreParams::default(), TPR),
            Err(SweepError::SeverityOrder { .. })
        ));
    }

    fn with_id_prompts(b: &Bundle, prompts: EmbeddingMatrix) -> Bundle {
        let mut v = b.clone();
        v.id_prompts = prompts;
        v
    }

    #[test]
    fn prompt_variation_identity_and_correlation() {
        let b = bundle();
        let p = ScoreParams::default();
        let same = run_prompt_variation(&SequentialScorer, &b, &[("same", &b), ("same2", &b)], ScoringRule::IdOod, &p, TPR);
        // zero variance in both coordinates: correlation undefined
        assert_eq!(same, Err(SweepError::Correlation(MetricError::ZeroVariance)));

        let v1 = with_id_prompts(&b, perturb_embeddings(&b, PerturbTarget::Prompts, 0.3, 7).unwrap().id_prompts);
        let v2 = with_id_prompts(&b, perturb_embeddings(&b, PerturbTarget::Prompts, 0.9, 7).unwrap().id_prompts);
        let r = run_prompt_variation(&SequentialScorer, &b, &[("v1", &v1), ("v2", &v2)], ScoringRule::IdOod, &p, TPR).unwrap();
        assert_eq!(r.points[0].axis, Some(0.0));
        assert_eq!(r.points[0].extra["delta_auroc"], 0.0);
        let xs: Vec<f64> = r.points[1..].iter().map(|q| q.axis.unwrap()).collect();
        let ys: Vec<f64> = r.points[1..].iter().map(|q| q.extra["delta_auroc"]).collect();
        // two points: r is exactly +-1 unless a coordinate is flat
        assert_eq!(r.statistics["pearson_r"].abs(), 1.0);
        assert_eq!(r.statistics["pearson_r"], pearson_r(&xs, &ys).unwrap());

        let single = run_prompt_variation(&SequentialScorer, &b, &[("v1", &v1)], ScoringRule::IdOod, &p, TPR);
        assert_eq!(single, Err(SweepError::Correlation(MetricError::TooFewPoints(1))));
    }

    #[test]
    fn prompt_variation_rejects_image_changes() {
        let b = bundle();
        let moved = perturb_embeddings(&b, PerturbTarget::Images, 0.1, 1).unwrap();
        let err = run_prompt_variation(&SequentialScorer, &b, &[("m", &moved)], ScoringRule::IdOod, &ScoreParams::default(), TPR);
        assert_eq!(err, Err(SweepError::ImagesChanged("m".into())));
        let mut ood = b.clone();
        ood.ood_prompts = b.id_prompts.clone();
        let err = run_prompt_variation(&SequentialScorer, &b, &[("o", &ood)], ScoringRule::IdOod, &ScoreParams::default(), TPR);
        assert_eq!(err, Err(SweepError::OodPromptsChanged("o".into())));
    }

    #[test]
    fn complexity_sorted_ascending() {
        let b = bundle();
        let long = load_ood_prompts(&["a photo of a thing", "a blurry photo of a thing"]).unwrap();
        let short = load_ood_prompts(&["thing", "object"]).unwrap();
        let r = run_complexity_sweep(
            &SequentialScorer,
            &[("long", &long, &b), ("short", &short, &b)],
            &[ScoringRule::IdOod],
            &ScoreParams::default(),
            TPR,
        )
        .unwrap();
        assert_eq!(r.points[0].label, "short");
        assert_eq!(r.points[1].extra["avg_word_count"], 5.5);
        assert_eq!(r.averages[0].auroc, r.averages[1].auroc);
    }

    #[test]
    fn temperature_dedup_and_consistency() {
        let b = bundle();
        let p = ScoreParams::default();
        let r = run_temperature_sweep(&SequentialScorer, &b, &[1.0, 0.1, 1.0], &p, TPR).unwrap();
        assert_eq!(r.points.len(), 2);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.points[0].axis, Some(0.1));
        assert_eq!(r.points[0].extra["log10_tau"], -1.0);

        let one = run_temperature_sweep(&SequentialScorer, &b, &[1.0], &p, TPR).unwrap();
        let cmp = run_comparison(&SequentialScorer, &[("b", &b)], &[ScoringRule::Id, ScoringRule::IdOod], &p, TPR).unwrap();
        assert_eq!(one.rows, cmp.rows);
        assert_eq!(
            run_temperature_sweep(&SequentialScorer, &b, &[0.5, 0.0], &p, TPR),
            Err(SweepError::InvalidTemperature(0.0))
        );
        assert_eq!(
            run_temperature_sweep(&SequentialScorer, &b, &[-1.0], &p, TPR),
            Err(SweepError::InvalidTemperature(-1.0))
        );
    }
}

//! JSON sweep configurations and their execution.
//!
//! ```json
//! {
//!   "kind": "severity",
//!   "rules": ["score_id_ood"],
//!   "params": { "tau": 1.0 },
//!   "tpr_target": 0.95,
//!   "synthetic": {
//!     "config": { "seed": 42 },
//!     "perturb": { "target": "images", "scales": [0.0, 0.25, 0.5, 0.75, 1.0], "seed": 7 }
//!   },
//!   "points": [
//!     { "bundle": "clean/", "corruption": "gaussian_noise", "severity": 0 },
//!     { "bundle": "gauss1/", "corruption": "gaussian_noise", "severity": 1 }
//!   ]
//! }
//! ```
//!
//! `kind` is one of `comparison`, `severity`, `prompt-variation`,
//! `prompt-complexity`, `temperature`. Relative paths resolve against the
//! directory holding the config file. A `synthetic` block generates bundles
//! in memory:
//!
//! * comparison, temperature: the generated bundle is an extra point (listed
//!   first);
//! * severity: one point per perturbation scale, corruption
//!   `embedding-noise-<target>`;
//! * prompt-variation: the generated bundle is the baseline and each scale
//!   gives a variant whose ID prompts are noised (OOD prompts held fixed).
//!
//! `prompt-complexity` needs an `ood_prompts` text file on every point. For
//! `prompt-variation` without `synthetic`, `baseline` names the baseline
//! bundle and `points` are the variants.

use std::path::{Path, PathBuf};

use oodkit_core::sweep::{self, EvalReport, SeverityPoint, SweepError, SweepKind};
use oodkit_core::synth::{generate, perturb_embeddings, PerturbTarget, SynthConfig, SynthError};
use oodkit_core::{Bundle, BundleScorer, PromptSet, ScoreParams, ScoringRule, DEFAULT_TPR_TARGET};
use serde::{Deserialize, Serialize};

use crate::prompts::read_lines;
use crate::store::{read_bundle, BundleError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: SweepKind,
    /// Defaults: `score_id` and `score_id_ood` for comparison and complexity,
    /// `score_id_ood` for severity and prompt variation. Ignored by the
    /// temperature sweep, which always reports both VLM rules.
    #[serde(default)]
    pub rules: Vec<ScoringRule>,
    #[serde(default)]
    pub params: ScoreParams,
    #[serde(default = "default_tpr")]
    pub tpr_target: f64,
    /// Temperature grid; empty means the default grid.
    #[serde(default)]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub points: Vec<PointSpec>,
    #[serde(default)]
    pub baseline: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Output directory, overridden by `--out`.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_tpr() -> f64 {
    DEFAULT_TPR_TARGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub bundle: PathBuf,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub corruption: Option<String>,
    #[serde(default)]
    pub severity: Option<f64>,
    #[serde(default)]
    pub ood_prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub config: SynthConfig,
    #[serde(default)]
    pub perturb: Option<PerturbSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    pub target: PerturbTarget,
    pub scales: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepRunError {
    #[error("sweep config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Bundle { path: PathBuf, source: BundleError },
    #[error("{path}: {source}")]
    Prompts { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, SweepRunError> {
    Err(SweepRunError::Config(msg.into()))
}

impl SweepSpec {
    pub fn effective_rules(&self) -> Vec<ScoringRule> {
        if !self.rules.is_empty() {
            return self.rules.clone();
        }
        match self.kind {
            SweepKind::Comparison | SweepKind::PromptComplexity | SweepKind::Temperature => {
                vec![ScoringRule::Id, ScoringRule::IdOod]
            }
            SweepKind::Severity | SweepKind::PromptVariation => vec![ScoringRule::IdOod],
        }
    }
}

struct Loaded {
    label: String,
    bundle: Bundle,
    spec: Option<PointSpec>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_points(spec: &SweepSpec, base: &Path) -> Result<Vec<Loaded>, SweepRunError> {
    spec.points
        .iter()
        .map(|p| {
            let path = resolve(base, &p.bundle);
            let bundle = read_bundle(&path).map_err(|source| SweepRunError::Bundle { path: path.clone(), source })?;
            let label = p.label.clone().unwrap_or_else(|| p.bundle.display().to_string());
            Ok(Loaded { label, bundle, spec: Some(p.clone()) })
        })
        .collect()
}

fn perturbed(base: &Bundle, p: &PerturbSpec) -> Result<Vec<(f64, Bundle)>, SweepRunError> {
    p.scales
        .iter()
        .map(|&s| Ok((s, perturb_embeddings(base, p.target, s, p.seed)?)))
        .collect()
}

fn target_name(t: PerturbTarget) -> &'static str {
    match t {
        PerturbTarget::Images => "images",
        PerturbTarget::Prompts => "prompts",
    }
}

/// Loads every input the config names and runs the sweep.
pub fn run_sweep<S: BundleScorer + ?Sized>(scorer: &S, spec: &SweepSpec, base_dir: &Path) -> Result<EvalReport, SweepRunError> {
    let rules = spec.effective_rules();
    let params = &spec.params;
    let tpr = spec.tpr_target;
    let generated = spec.synthetic.as_ref().map(|s| generate(&s.config)).transpose()?;
    let perturb = spec.synthetic.as_ref().and_then(|s| s.perturb.as_ref());
    let mut points = load_points(spec, base_dir)?;

    let report = match spec.kind {
        SweepKind::Comparison => {
            if let Some(b) = generated {
                points.insert(0, Loaded { label: "synthetic".into(), bundle: b, spec: None });
            }
            let refs: Vec<(&str, &Bundle)> = points.iter().map(|p| (p.label.as_str(), &p.bundle)).collect();
            sweep::run_comparison(scorer, &refs, &rules, params, tpr)?
        }
        SweepKind::Temperature => {
            if let Some(b) = generated {
                points.insert(0, Loaded { label: "synthetic".into(), bundle: b, spec: None });
            }
            if points.len() != 1 {
                return config_err(format!("temperature sweep takes exactly one bundle, got {}", points.len()));
            }
            let taus = if spec.taus.is_empty() { sweep::DEFAULT_TAUS.to_vec() } else { spec.taus.clone() };
            sweep::run_temperature_sweep(scorer, &points[0].bundle, &taus, params, tpr)?
        }
        SweepKind::Severity => {
            let mut owned: Vec<(String, f64, Bundle)> = Vec::new();
            if let Some(base) = &generated {
                let Some(p) = perturb else {
                    return config_err("severity sweep with a synthetic bundle needs a perturb ladder");
                };
                let corruption = format!("embedding-noise-{}", target_name(p.target));
                for (scale, b) in perturbed(base, p)? {
                    owned.push((corruption.clone(), scale, b));
                }
            }
            for p in points {
                let s = p.spec.expect("loaded from points");
                let (Some(c), Some(sev)) = (s.corruption, s.severity) else {
                    return config_err(format!("severity point {:?} needs corruption and severity", p.label));
                };
                owned.push((c, sev, p.bundle));
            }
            let refs: Vec<SeverityPoint<'_>> = owned
                .iter()
                .map(|(c, s, b)| SeverityPoint { corruption: c, severity: *s, bundle: b })
                .collect();
            sweep::run_severity_sweep(scorer, &refs, &rules, params, tpr)?
        }
        SweepKind::PromptVariation => {
            if rules.len() != 1 {
                return config_err("prompt-variation takes exactly one rule");
            }
            let baseline = match (&generated, &spec.baseline) {
                (Some(b), None) => b.clone(),
                (None, Some(path)) => {
                    let path = resolve(base_dir, path);
                    read_bundle(&path).map_err(|source| SweepRunError::Bundle { path, source })?
                }
                _ => return config_err("prompt-variation needs exactly one of baseline or synthetic"),
            };
            let mut variants: Vec<(String, Bundle)> = Vec::new();
            if let Some(p) = perturb {
                if generated.is_none() {
                    return config_err("perturb needs a synthetic baseline");
                }
                for (scale, noisy) in perturbed(&baseline, &PerturbSpec { target: PerturbTarget::Prompts, ..p.clone() })? {
                    let mut v = baseline.clone();
                    v.id_prompts = noisy.id_prompts;
                    v.metadata = noisy.metadata;
                    variants.push((format!("id-prompt-noise@{scale}"), v));
                }
            }
            variants.extend(points.into_iter().map(|p| (p.label, p.bundle)));
            let refs: Vec<(&str, &Bundle)> = variants.iter().map(|(l, b)| (l.as_str(), b)).collect();
            sweep::run_prompt_variation(scorer, &baseline, &refs, rules[0], params, tpr)?
        }
        SweepKind::PromptComplexity => {
            if generated.is_some() {
                return config_err("prompt-complexity needs real prompt text; synthetic bundles are not supported");
            }
            let mut sets: Vec<PromptSet> = Vec::new();
            for p in &points {
                let Some(file) = p.spec.as_ref().and_then(|s| s.ood_prompts.as_ref()) else {
                    return config_err(format!("complexity point {:?} needs an ood_prompts file", p.label));
                };
                let path = resolve(base_dir, file);
                let lines = read_lines(&path).map_err(|source| SweepRunError::Prompts { path: path.clone(), source })?;
                let set = oodkit_core::prompt::load_ood_prompts(&lines)
                    .map_err(|e| SweepRunError::Config(format!("{}: {e}", path.display())))?;
                if set.rendered.len() != p.bundle.m() {
                    return config_err(format!(
                        "{}: {} prompts but bundle {:?} has M = {}",
                        path.display(),
                        set.rendered.len(),
                        p.label,
                        p.bundle.m()
                    ));
                }
                sets.push(set);
            }
            let refs: Vec<(&str, &PromptSet, &Bundle)> =
                points.iter().zip(&sets).map(|(p, s)| (p.label.as_str(), s, &p.bundle)).collect();
            sweep::run_complexity_sweep(scorer, &refs, &rules, params, tpr)?
        }
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use oodkit_core::SequentialScorer;

    fn small() -> SynthConfig {
        SynthConfig { dim: 16, k: 4, m: 4, n_id: 60, n_ood: 40, ..Default::default() }
    }

    #[test]
    fn parses_minimal_config() {
        let s: SweepSpec = serde_json::from_str(r#"{"kind": "temperature", "synthetic": {}}"#).unwrap();
        assert_eq!(s.tpr_target, 0.95);
        assert_eq!(s.params, ScoreParams::default());
        assert!(serde_json::from_str::<SweepSpec>(r#"{"kind": "temperature", "bogus": 1}"#).is_err());
    }

    #[test]
    fn synthetic_severity_ladder() {
        let spec = SweepSpec {
            kind: SweepKind::Severity,
            rules: vec![],
            params: ScoreParams::default(),
            tpr_target: 0.95,
            taus: vec![],
            points: vec![],
            baseline: None,
            synthetic: Some(SyntheticSpec {
                config: small(),
                perturb: Some(PerturbSpec { target: PerturbTarget::Images, scales: vec![0.0, 0.5, 1.0], seed: 3 }),
            }),
            output: None,
        };
        let r = run_sweep(&SequentialScorer, &spec, Path::new(".")).unwrap();
        assert_eq!(r.points.len(), 3);
        assert_eq!(r.points[2].series.as_deref(), Some("embedding-noise-images"));
    }

    #[test]
    fn synthetic_prompt_variation() {
        let spec: SweepSpec = serde_json::from_value(serde_json::json!({
            "kind": "prompt-variation",
            "synthetic": {"config": small(), "perturb": {"target": "prompts", "scales": [0.2, 0.6, 1.0], "seed": 1}}
        }))
        .unwrap();
        let r = run_sweep(&SequentialScorer, &spec, Path::new(".")).unwrap();
        assert_eq!(r.points.len(), 4);
        assert!(r.statistics["pearson_r"].abs() <= 1.0);
    }

    #[test]
    fn complexity_rejects_synthetic() {
        let spec: SweepSpec = serde_json::from_str(r#"{"kind": "prompt-complexity", "synthetic": {}}"#).unwrap();
        assert!(matches!(run_sweep(&SequentialScorer, &spec, Path::new(".")), Err(SweepRunError::Config(_))));
    }
}

//! Detector scoring rules.
//!
//! VLM rules work on the cosine similarities between an image embedding and
//! the K ID prompt embeddings followed by the M OOD prompt embeddings:
//!
//! * `score_id`: `exp(s_k̂/τ) / Σ_{i<K} exp(s_i/τ)`, the maximum concept
//!   matching score over ID prompts only.
//! * `score_id_ood`: same numerator, with the denominator summed over all
//!   K + M prompts. The numerator always uses the best *ID* prompt.
//!
//! `k̂` is the first index attaining the maximum ID similarity. Every
//! softmax-style expression subtracts the running maximum before
//! exponentiating and sums in index order, so a row's score does not depend
//! on how rows are scheduled.
//!
//! Baseline rules (MSP, MaxLogit, Energy, ODIN) work on classifier logits.
//! For every rule a higher score means "more in-distribution".

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{Bundle, EmbeddingMatrix, Violation};
use crate::numeric::{cosine, dot};

/// Temperature and threshold settings shared by all rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreParams {
    /// Softmax temperature for the VLM rules.
    pub tau: f64,
    /// Decision threshold; `None` when only scores are wanted.
    pub lambda: Option<f64>,
    pub tau_odin: f64,
    /// Input-perturbation magnitude. Only recorded here: the perturbation is
    /// applied by whatever produced the logits.
    pub epsilon_odin: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self { tau: 1.0, lambda: None, tau_odin: 1000.0, epsilon_odin: 0.0014 }
    }
}

impl ScoreParams {
    pub fn with_tau(tau: f64) -> Self {
        Self { tau, ..Self::default() }
    }

    pub fn check(&self) -> Result<(), ScoreError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ScoreError::InvalidTemperature(self.tau));
        }
        if !(self.tau_odin > 0.0 && self.tau_odin.is_finite()) {
            return Err(ScoreError::InvalidTemperature(self.tau_odin));
        }
        if !(self.epsilon_odin >= 0.0) {
            return Err(ScoreError::InvalidEpsilon(self.epsilon_odin));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("ODIN epsilon must be non-negative, got {0}")]
    InvalidEpsilon(f64),
    #[error("dimension mismatch: image has {actual}, prompts have {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error("similarity row has {len} entries but needs K = {k} >= 1 ID entries")]
    BadRow { len: usize, k: usize },
    #[error("rule {0} needs logits but the bundle has none")]
    MissingLogits(ScoringRule),
    #[error("rule {0} needs at least one ID prompt")]
    MissingPrompts(ScoringRule),
    #[error("no logits for population {0}")]
    MissingPopulation(String),
    #[error("bundle is invalid ({} violations, first: {})", .0.len(), .0[0])]
    InvalidBundle(Vec<Violation>),
}

/// Similarities of one image to K ID prompts then M OOD prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub values: Vec<f64>,
    /// Number of leading ID entries.
    pub k: usize,
    /// Index of the best ID entry, lowest index on ties.
    pub k_hat: usize,
}

impl SimilarityRow {
    /// Wraps precomputed similarities, the first `k` of which belong to ID
    /// prompts.
    pub fn from_values(values: Vec<f64>, k: usize) -> Result<Self, ScoreError> {
        if k == 0 || k > values.len() {
            return Err(ScoreError::BadRow { len: values.len(), k });
        }
        let k_hat = argmax_first(&values[..k]);
        Ok(Self { values, k, k_hat })
    }

    pub fn m(&self) -> usize {
        self.values.len() - self.k
    }

    pub fn id_values(&self) -> &[f64] {
        &self.values[..self.k]
    }

    pub fn ood_values(&self) -> &[f64] {
        &self.values[self.k..]
    }

    /// Best ID similarity, `max_{i<K} s_i`.
    pub fn max_id(&self) -> f64 {
        self.values[self.k_hat]
    }
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Cosine similarities of `image` to every row of `prompts`; the first `k`
/// rows are ID prompts.
pub fn cosine_similarities(image: &[f32], prompts: &EmbeddingMatrix, k: usize) -> Result<SimilarityRow, ScoreError> {
    PromptBank::from_matrix(prompts.clone(), k)?.similarities(image)
}

/// ID and OOD prompt rows stacked together, with squared norms cached.
#[derive(Debug, Clone)]
pub struct PromptBank {
    prompts: EmbeddingMatrix,
    sq_norms: Vec<f64>,
    k: usize,
}

impl PromptBank {
    pub fn new(id_prompts: &EmbeddingMatrix, ood_prompts: &EmbeddingMatrix) -> Result<Self, ScoreError> {
        let stacked = id_prompts.stack(ood_prompts).map_err(|_| ScoreError::DimMismatch {
            expected: id_prompts.dim(),
            actual: ood_prompts.dim(),
        })?;
        Self::from_matrix(stacked, id_prompts.rows())
    }

    pub fn from_matrix(prompts: EmbeddingMatrix, k: usize) -> Result<Self, ScoreError> {
        if k == 0 || k > prompts.rows() {
            return Err(ScoreError::BadRow { len: prompts.rows(), k });
        }
        let sq_norms: Vec<f64> = prompts.iter_rows().map(|r| dot(r, r)).collect();
        if sq_norms.contains(&0.0) {
            return Err(ScoreError::ZeroVector);
        }
        Ok(Self { prompts, sq_norms, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.prompts.rows() - self.k
    }

    pub fn dim(&self) -> usize {
        self.prompts.dim()
    }

    pub fn similarities(&self, image: &[f32]) -> Result<SimilarityRow, ScoreError> {
        if image.len() != self.prompts.dim() {
            return Err(ScoreError::DimMismatch { expected: self.prompts.dim(), actual: image.len() });
        }
        let v_sq = dot(image, image);
        let values = self
            .prompts
            .iter_rows()
            .zip(&self.sq_norms)
            .map(|(c, &c_sq)| cosine(image, c, v_sq, c_sq).ok_or(ScoreError::ZeroVector))
            .collect::<Result<Vec<_>, _>>()?;
        SimilarityRow::from_values(values, self.k)
    }
}

fn check_tau(tau: f64) -> Result<(), ScoreError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(ScoreError::InvalidTemperature(tau))
    }
}

/// ID-only maximum concept matching score.
pub fn score_id(sims: &SimilarityRow, tau: f64) -> Result<f64, ScoreError> {
    check_tau(tau)?;
    let top = sims.max_id();
    let denom: f64 = sims.id_values().iter().map(|&s| libm::exp((s - top) / tau)).sum();
    Ok(1.0 / denom)
}

/// Unified ID + OOD score: best-ID numerator over all K + M prompts.
pub fn score_id_ood(sims: &SimilarityRow, tau: f64) -> Result<f64, ScoreError> {
    check_tau(tau)?;
    let top = sims.max_id();
    let shift = max_of(&sims.values);
    let numer = libm::exp((top - shift) / tau);
    let denom: f64 = sims.values.iter().map(|&s| libm::exp((s - shift) / tau)).sum();
    Ok(numer / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Id,
    Ood,
}

/// ID iff `score >= lambda`.
pub fn decide(score: f64, lambda: f64) -> Decision {
    if score >= lambda {
        Decision::Id
    } else {
        Decision::Ood
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let top = max_of(z);
    if top.is_infinite() {
        return top;
    }
    top + libm::log(z.iter().map(|&x| libm::exp(x - top)).sum::<f64>())
}

/// Maximum softmax probability.
pub fn score_msp(logits: &[f64]) -> f64 {
    let top = max_of(logits);
    1.0 / logits.iter().map(|&z| libm::exp(z - top)).sum::<f64>()
}

pub fn score_maxlogit(logits: &[f64]) -> f64 {
    max_of(logits)
}

/// Negative free energy, `log Σ exp(z)`.
pub fn score_energy(logits: &[f64]) -> f64 {
    log_sum_exp(logits)
}

/// Maximum softmax probability of `logits / tau_odin`. The logits are
/// expected to come from the already-perturbed input.
pub fn score_odin(logits: &[f64], tau_odin: f64) -> f64 {
    let top = max_of(logits);
    1.0 / logits.iter().map(|&z| libm::exp((z - top) / tau_odin)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScoringRule {
    #[serde(rename = "score_id")]
    Id,
    #[serde(rename = "score_id_ood")]
    IdOod,
    #[serde(rename = "msp")]
    Msp,
    #[serde(rename = "maxlogit")]
    MaxLogit,
    #[serde(rename = "energy")]
    Energy,
    #[serde(rename = "odin")]
    Odin,
}

impl ScoringRule {
    pub const ALL: [ScoringRule; 6] = [Self::Id, Self::IdOod, Self::Msp, Self::MaxLogit, Self::Energy, Self::Odin];

    pub fn name(self) -> &'static str {
        match self {
            Self::Id => "score_id",
            Self::IdOod => "score_id_ood",
            Self::Msp => "msp",
            Self::MaxLogit => "maxlogit",
            Self::Energy => "energy",
            Self::Odin => "odin",
        }
    }

    pub fn uses_logits(self) -> bool {
        matches!(self, Self::Msp | Self::MaxLogit | Self::Energy | Self::Odin)
    }
}

impl fmt::Display for ScoringRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown scoring rule {0:?} (expected one of score_id, score_id_ood, msp, maxlogit, energy, odin)")]
pub struct UnknownRule(pub String);

impl FromStr for ScoringRule {
    type Err = UnknownRule;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| UnknownRule(s.to_string()))
    }
}

/// Scores one row under a fixed rule: an image embedding for the VLM rules,
/// a logit vector for the baselines.
#[derive(Debug, Clone)]
pub struct RowScorer {
    rule: ScoringRule,
    params: ScoreParams,
    bank: Option<PromptBank>,
}

impl RowScorer {
    pub fn new(bundle: &Bundle, rule: ScoringRule, params: ScoreParams) -> Result<Self, ScoreError> {
        params.check()?;
        let bank = if rule.uses_logits() {
            if bundle.logits.is_none() {
                return Err(ScoreError::MissingLogits(rule));
            }
            None
        } else {
            if bundle.id_prompts.is_empty() {
                return Err(ScoreError::MissingPrompts(rule));
            }
            Some(PromptBank::new(&bundle.id_prompts, &bundle.ood_prompts)?)
        };
        Ok(Self { rule, params, bank })
    }

    pub fn rule(&self) -> ScoringRule {
        self.rule
    }

    pub fn score_row(&self, row: &[f32]) -> Result<f64, ScoreError> {
        let tau = self.params.tau;
        match (self.rule, &self.bank) {
            (ScoringRule::Id, Some(bank)) => score_id(&bank.similarities(row)?, tau),
            (ScoringRule::IdOod, Some(bank)) => score_id_ood(&bank.similarities(row)?, tau),
            (rule, _) => {
                let z: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
                Ok(match rule {
                    ScoringRule::Msp => score_msp(&z),
                    ScoringRule::MaxLogit => score_maxlogit(&z),
                    ScoringRule::Energy => score_energy(&z),
                    ScoringRule::Odin => score_odin(&z, self.params.tau_odin),
                    ScoringRule::Id | ScoringRule::IdOod => unreachable!("prompt bank built for VLM rules"),
                })
            }
        }
    }

    /// The matrices to score, ID population first then OOD datasets in name
    /// order.
    pub fn inputs<'b>(&self, bundle: &'b Bundle) -> Result<Vec<(Option<&'b str>, &'b EmbeddingMatrix)>, ScoreError> {
        let mut out = Vec::with_capacity(1 + bundle.ood_images.len());
        if self.rule.uses_logits() {
            let logits = bundle.logits.as_ref().ok_or(ScoreError::MissingLogits(self.rule))?;
            out.push((None, &logits.id));
            for name in bundle.ood_images.keys() {
                let m = logits.ood.get(name).ok_or_else(|| ScoreError::MissingPopulation(name.clone()))?;
                out.push((Some(name.as_str()), m));
            }
        } else {
            out.push((None, &bundle.id_images));
            for (name, m) in &bundle.ood_images {
                out.push((Some(name.as_str()), m));
            }
        }
        Ok(out)
    }
}

/// Per-image scores for every population of a bundle, in row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleScores {
    pub rule: ScoringRule,
    pub params: ScoreParams,
    pub id: Vec<f64>,
    pub ood: BTreeMap<String, Vec<f64>>,
}

/// Strategy for scoring a whole bundle. Implementations must return exactly
/// what [`SequentialScorer`] returns, whatever their internal scheduling.
pub trait BundleScorer {
    fn score_bundle(&self, bundle: &Bundle, rule: ScoringRule, params: &ScoreParams) -> Result<BundleScores, ScoreError>;
}

/// Single-threaded reference scorer.
#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialScorer;

impl BundleScorer for SequentialScorer {
    fn score_bundle(&self, bundle: &Bundle, rule: ScoringRule, params: &ScoreParams) -> Result<BundleScores, ScoreError> {
        score_bundle_with(bundle, rule, params, |scorer, m| {
            m.iter_rows().map(|r| scorer.score_row(r)).collect()
        })
    }
}

/// Validates the bundle, builds a [`RowScorer`] and scores every population
/// matrix through `score_matrix`.
pub fn score_bundle_with<F>(bundle: &Bundle, rule: ScoringRule, params: &ScoreParams, mut score_matrix: F) -> Result<BundleScores, ScoreError>
where
    F: FnMut(&RowScorer, &EmbeddingMatrix) -> Result<Vec<f64>, ScoreError>,
{
    let violations = bundle.validate();
    if !violations.is_empty() {
        return Err(ScoreError::InvalidBundle(violations));
    }
    let scorer = RowScorer::new(bundle, rule, *params)?;
    let mut out = BundleScores { rule, params: *params, id: Vec::new(), ood: BTreeMap::new() };
    for (population, m) in scorer.inputs(bundle)? {
        let scores = score_matrix(&scorer, m)?;
        match population {
            None => out.id = scores,
            Some(name) => {
                out.ood.insert(name.to_string(), scores);
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper around [`SequentialScorer`].
pub fn score_bundle(bundle: &Bundle, rule: ScoringRule, params: &ScoreParams) -> Result<BundleScores, ScoreError> {
    SequentialScorer.score_bundle(bundle, rule, params)
}

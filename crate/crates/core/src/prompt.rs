//! ID / OOD prompt sets and prompt complexity statistics.
//!
//! ID prompts are rendered from class labels through templates containing a
//! single `{label}` placeholder, label-major: with T templates, prompt
//! `i * T + j` is template `j` applied to label `i`. OOD prompts are literal
//! strings kept in input order.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::numeric::{cosine, dot};

pub const LABEL_PLACEHOLDER: &str = "{label}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    Id,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub role: PromptRole,
    pub templates: Vec<String>,
    pub rendered: Vec<String>,
    pub set_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("no labels given")]
    NoLabels,
    #[error("no templates given")]
    NoTemplates,
    #[error("template {index} must contain exactly one {{label}} placeholder: {template:?}")]
    Placeholder { index: usize, template: String },
    #[error("label {index} is empty")]
    EmptyLabel { index: usize },
    #[error("prompt list is empty")]
    NoPrompts,
    #[error("prompt {index} is empty or whitespace-only")]
    EmptyPrompt { index: usize },
    #[error("prompt matrices differ: {0}")]
    Mismatch(&'static str),
    #[error("prompt row {row} is an all-zero vector")]
    ZeroRow { row: usize },
}

impl PromptSet {
    pub fn len(&self) -> usize {
        self.rendered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rendered.is_empty()
    }
}

pub fn render_id_prompts<L, T>(labels: &[L], templates: &[T]) -> Result<PromptSet, PromptError>
where
    L: AsRef<str>,
    T: AsRef<str>,
{
    if labels.is_empty() {
        return Err(PromptError::NoLabels);
    }
    if templates.is_empty() {
        return Err(PromptError::NoTemplates);
    }
    for (index, t) in templates.iter().enumerate() {
        if t.as_ref().matches(LABEL_PLACEHOLDER).count() != 1 {
            return Err(PromptError::Placeholder { index, template: t.as_ref().to_string() });
        }
    }
    let mut rendered = Vec::with_capacity(labels.len() * templates.len());
    for (index, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        if label.trim().is_empty() {
            return Err(PromptError::EmptyLabel { index });
        }
        for t in templates {
            rendered.push(t.as_ref().replacen(LABEL_PLACEHOLDER, label, 1));
        }
    }
    Ok(PromptSet {
        role: PromptRole::Id,
        templates: templates.iter().map(|t| t.as_ref().to_string()).collect(),
        rendered,
        set_id: String::from("id"),
    })
}

pub fn load_ood_prompts<S: AsRef<str>>(strings: &[S]) -> Result<PromptSet, PromptError> {
    if strings.is_empty() {
        return Err(PromptError::NoPrompts);
    }
    let rendered: Vec<String> = strings.iter().map(|s| s.as_ref().to_string()).collect();
    if let Some(index) = rendered.iter().position(|s| s.trim().is_empty()) {
        return Err(PromptError::EmptyPrompt { index });
    }
    Ok(PromptSet {
        role: PromptRole::Ood,
        templates: rendered.clone(),
        rendered,
        set_id: String::from("ood"),
    })
}

/// Average word count and unique-word ratio over a whole prompt set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptComplexity {
    pub avg_word_count: f64,
    pub unique_word_ratio: f64,
}

/// Tokens are the ASCII-whitespace-separated pieces of the lowercased prompt;
/// punctuation stays attached to its token.
pub fn complexity(prompts: &PromptSet) -> Result<PromptComplexity, PromptError> {
    if prompts.rendered.is_empty() {
        return Err(PromptError::NoPrompts);
    }
    let mut total = 0usize;
    let mut distinct = BTreeSet::new();
    for p in &prompts.rendered {
        let lower = p.to_lowercase();
        for tok in lower.split_ascii_whitespace() {
            total += 1;
            distinct.insert(tok.to_string());
        }
    }
    if total == 0 {
        return Err(PromptError::EmptyPrompt { index: 0 });
    }
    Ok(PromptComplexity {
        avg_word_count: total as f64 / prompts.rendered.len() as f64,
        unique_word_ratio: distinct.len() as f64 / total as f64,
    })
}

/// Mean cosine distance `1 - cos(a_i, b_i)` between paired prompt rows.
pub fn prompt_set_distance(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<f64, PromptError> {
    if a.dim() != b.dim() {
        return Err(PromptError::Mismatch("dimension"));
    }
    if a.rows() != b.rows() {
        return Err(PromptError::Mismatch("row count"));
    }
    if a.is_empty() {
        return Err(PromptError::NoPrompts);
    }
    let mut sum = 0.0;
    for (row, (x, y)) in a.iter_rows().zip(b.iter_rows()).enumerate() {
        match cosine(x, y, dot(x, x), dot(y, y)) {
            Some(c) => sum += 1.0 - c,
            None => return Err(PromptError::ZeroRow { row }),
        }
    }
    Ok(sum / a.rows() as f64)
}

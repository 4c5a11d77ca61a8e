//! Line-oriented prompt files.
//!
//! One prompt (or label, or template) per line, UTF-8. Trailing `\r` is
//! stripped, lines that are blank or start with `#` are skipped, and all
//! other lines are kept verbatim and in order, duplicates included.

use std::fs;
use std::io;
use std::path::Path;

use oodkit_core::prompt::{load_ood_prompts, PromptError};
use oodkit_core::PromptSet;

/// The shipped default OOD prompt list.
pub const DEFAULT_OOD_PROMPTS: &str = include_str!("../data/ood_prompts_default.txt");

pub fn parse_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn read_lines(path: &Path) -> io::Result<Vec<String>> {
    Ok(parse_lines(&fs::read_to_string(path)?))
}

pub fn default_ood_prompts() -> Result<PromptSet, PromptError> {
    load_ood_prompts(&parse_lines(DEFAULT_OOD_PROMPTS))
}

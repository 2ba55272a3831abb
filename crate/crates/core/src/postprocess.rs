//! Boilerplate filtering and normalization of generated questions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::generation::QuestionRecord;

const SHIPPED_PUBLISHERS: &str = include_str!("../data/publishers.txt");

#[derive(Debug, thiserror::Error)]
pub enum FilterConfigError {
    #[error("cannot read term list {path}: {source}")]
    Read {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("banned terms must be non-empty")]
    EmptyTerm,
}

/// Parses a term list: one term per line, `#` comments and blank lines skipped.
pub fn parse_term_list(list: &str) -> Vec<String> {
    list.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub banned_substrings: Vec<String>,
    pub banned_publisher_names: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            banned_substrings: vec!["preprint".into(), "copyright".into()],
            banned_publisher_names: parse_term_list(SHIPPED_PUBLISHERS),
        }
    }
}

impl FilterConfig {
    pub fn new(substrings: Vec<String>, publishers: Vec<String>) -> Result<Self, FilterConfigError> {
        let lower = |v: Vec<String>| -> Result<Vec<String>, FilterConfigError> {
            v.into_iter()
                .map(|t| {
                    let t = t.trim().to_lowercase();
                    if t.is_empty() {
                        Err(FilterConfigError::EmptyTerm)
                    } else {
                        Ok(t)
                    }
                })
                .collect()
        };
        Ok(Self {
            banned_substrings: lower(substrings)?,
            banned_publisher_names: lower(publishers)?,
        })
    }

    /// Default substrings with the publisher list replaced by the file's terms.
    pub fn with_publisher_file(path: &Path) -> Result<Self, FilterConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| FilterConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::new(Self::default().banned_substrings, parse_term_list(&text))
    }

    fn terms(&self) -> impl Iterator<Item = &str> {
        self.banned_substrings
            .iter()
            .chain(&self.banned_publisher_names)
            .map(String::as_str)
    }

    pub fn is_banned(&self, question: &str) -> bool {
        let q = question.to_lowercase();
        self.terms().any(|t| q.contains(t))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<QuestionRecord>,
    pub dropped: usize,
}

pub fn filter_questions<I>(records: I, cfg: &FilterConfig) -> FilterOutcome
where
    I: IntoIterator<Item = QuestionRecord>,
{
    let mut out = FilterOutcome::default();
    for r in records {
        if cfg.is_banned(&r.question) {
            out.dropped += 1;
        } else {
            out.kept.push(r);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Lowercase and collapse whitespace; punctuation is kept.
    #[default]
    Literal,
    /// Additionally maps hyphens to spaces and strips trailing `?`.
    Aggressive,
}

/// Aggregation key for a question: lowercase, single-spaced, trimmed.
pub fn normalize_question(q: &str) -> String {
    normalize_with(q, Normalization::Literal)
}

pub fn normalize_with(q: &str, mode: Normalization) -> String {
    let lower = q.to_lowercase();
    match mode {
        Normalization::Literal => lower.split_whitespace().collect::<Vec<_>>().join(" "),
        Normalization::Aggressive => {
            let dehyphenated = lower.replace('-', " ");
            let joined = dehyphenated.split_whitespace().collect::<Vec<_>>().join(" ");
            joined
                .trim_end_matches(|c: char| c == '?' || c.is_whitespace())
                .to_string()
        }
    }
}

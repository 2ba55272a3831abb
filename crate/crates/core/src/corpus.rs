//! Corpus ingestion: JSON-lines documents and the date/keyword filter.
//!
//! One document per line:
//!
//! ```json
//! {"doc_id": "abc", "title": "...", "publish_date": "2020-03-01", "passages": ["...", "..."]}
//! ```
//!
//! `doc_id` is required and must be unique; `publish_date` is an ISO-8601
//! calendar date or `null`; `title` and `passages` default to empty.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub publish_date: Option<NaiveDate>,
    #[serde(default)]
    pub passages: Vec<String>,
}

/// A record that failed schema validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordDiagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RecordDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid record at {0}")]
    Record(RecordDiagnostic),
    #[error("unknown corpus format `{0}` (expected `jsonl`)")]
    UnknownFormat(String),
    #[error("keyword terms must be non-empty")]
    EmptyKeyword,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    JsonLines,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" | "json-lines" | "ndjson" => Ok(Self::JsonLines),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Skip invalid records and collect diagnostics.
    #[default]
    Lenient,
    /// Abort on the first invalid record.
    Strict,
}

#[derive(Deserialize)]
struct RawDocument {
    doc_id: Option<String>,
    title: Option<String>,
    publish_date: Option<String>,
    passages: Option<Vec<String>>,
}

/// Streams documents from a JSON-lines reader, validating each record.
///
/// Record-level problems are yielded as [`CorpusError::Record`] so callers can
/// choose whether to skip them; I/O errors are yielded as [`CorpusError::Io`].
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            seen: HashSet::new(),
        }
    }

    fn parse(&mut self, line: &str) -> Result<Document, String> {
        let raw: RawDocument = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let doc_id = match raw.doc_id {
            Some(id) if !id.trim().is_empty() => id,
            Some(_) => return Err("empty doc_id".into()),
            None => return Err("missing doc_id".into()),
        };
        let publish_date = raw
            .publish_date
            .map(|d| {
                NaiveDate::parse_from_str(&d, "%Y-%m-%d")
                    .map_err(|e| format!("invalid publish_date `{d}`: {e}"))
            })
            .transpose()?;
        if !self.seen.insert(doc_id.clone()) {
            return Err(format!("duplicate doc_id `{doc_id}`"));
        }
        Ok(Document {
            doc_id,
            title: raw.title.unwrap_or_default(),
            publish_date,
            passages: raw.passages.unwrap_or_default(),
        })
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&line).map_err(|message| {
                CorpusError::Record(RecordDiagnostic {
                    line: self.line_no,
                    message,
                })
            }));
        }
    }
}

#[derive(Debug, Default)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    pub rejected: Vec<RecordDiagnostic>,
}

pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    strictness: Strictness,
) -> Result<LoadedCorpus, CorpusError> {
    match format {
        CorpusFormat::JsonLines => read_corpus(jsonl::open(path)?, strictness),
    }
}

pub fn read_corpus<R: BufRead>(
    reader: R,
    strictness: Strictness,
) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    for item in CorpusReader::new(reader) {
        match item {
            Ok(doc) => out.documents.push(doc),
            Err(CorpusError::Record(diag)) if strictness == Strictness::Lenient => {
                tracing::warn!("skipping corpus record: {diag}");
                out.rejected.push(diag);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    #[default]
    AnyOf,
    AllOf,
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "any" | "any-of" => Ok(Self::AnyOf),
            "all" | "all-of" => Ok(Self::AllOf),
            other => Err(format!("unknown match mode `{other}` (expected any|all)")),
        }
    }
}

/// Case-insensitive keyword condition over a document's title and passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordFilter {
    terms: Vec<String>,
    mode: MatchMode,
}

impl KeywordFilter {
    pub fn new<I, S>(terms: I, mode: MatchMode) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let terms = terms
            .into_iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .collect::<Vec<_>>();
        if terms.iter().any(String::is_empty) {
            return Err(CorpusError::EmptyKeyword);
        }
        Ok(Self { terms, mode })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    /// With no terms the condition is false in any-of mode and true in
    /// all-of mode (the identities of `or` and `and`).
    pub fn matches(&self, doc: &Document) -> bool {
        let fields: Vec<String> = std::iter::once(&doc.title)
            .chain(doc.passages.iter())
            .map(|s| s.to_lowercase())
            .collect();
        let found = |term: &String| fields.iter().any(|f| f.contains(term.as_str()));
        match self.mode {
            MatchMode::AnyOf => self.terms.iter().any(found),
            MatchMode::AllOf => self.terms.iter().all(found),
        }
    }
}

/// Date and keyword filter. An unset component does not constrain.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusFilter {
    /// Exclusive lower bound; documents without a date fail it.
    pub min_date: Option<NaiveDate>,
    pub keywords: Option<KeywordFilter>,
}

impl CorpusFilter {
    pub fn new<I, S>(min_date: NaiveDate, terms: I, mode: MatchMode) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Ok(Self {
            min_date: Some(min_date),
            keywords: Some(KeywordFilter::new(terms, mode)?),
        })
    }

    /// Papers published after October 2019 mentioning any COVID-related term.
    pub fn covid_default() -> Self {
        Self::new(
            NaiveDate::from_ymd_opt(2019, 10, 31).expect("valid date"),
            ["covid", "sars-cov", "sars-2", "wuhan", "china"],
            MatchMode::AnyOf,
        )
        .expect("non-empty terms")
    }

    pub fn is_noop(&self) -> bool {
        self.min_date.is_none() && self.keywords.is_none()
    }

    pub fn keeps(&self, doc: &Document) -> bool {
        if let Some(min) = self.min_date {
            match doc.publish_date {
                Some(d) if d > min => {}
                _ => return false,
            }
        }
        self.keywords.as_ref().is_none_or(|k| k.matches(doc))
    }
}

pub fn filter_corpus<'f, I>(docs: I, filter: &'f CorpusFilter) -> impl Iterator<Item = Document> + 'f
where
    I: IntoIterator<Item = Document>,
    I::IntoIter: 'f,
{
    docs.into_iter().filter(move |d| filter.keeps(d))
}

//! Artifact cleaning, sentence splitting and sentence-window spans.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"https?://\S+|www\.\S+").unwrap());
static EMAIL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\S+@\S+\.\S+").unwrap());
static DOI: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(doi:\s*)?10\.\d{4,9}/\S+").unwrap());
static CITATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[\d+(\s*,\s*\d+)*\]").unwrap());
static SECTION_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\d+(\.\d+)*\s+").unwrap());

/// Punctuation that closes the surrounding sentence rather than belonging to
/// a URL, address or DOI. It is kept when the token is removed.
const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', ')', ']', '}', '>', '"', '\''];

fn strip_keeping_trailing_punct(re: &Regex, text: &str) -> String {
    re.replace_all(text, |caps: &regex::Captures<'_>| {
        let m = &caps[0];
        let kept = m.trim_end_matches(TRAILING_PUNCT);
        m[kept.len()..].to_string()
    })
    .into_owned()
}

fn clean_once(text: &str) -> String {
    let t = SECTION_NUMBER.replace_all(text, "");
    let t = strip_keeping_trailing_punct(&URL, &t);
    let t = strip_keeping_trailing_punct(&EMAIL, &t);
    let t = strip_keeping_trailing_punct(&DOI, &t);
    let t = CITATION.replace_all(&t, "");
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes e-mail addresses, URLs, DOIs, bracketed citation tags and leading
/// section numbers, then collapses whitespace.
///
/// Deleting one artifact can expose another (`[1[2]]`), so the rules are
/// applied until nothing changes; the result is a fixed point.
pub fn clean_text(raw: &str) -> String {
    let mut current = clean_once(raw);
    loop {
        let next = clean_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

pub trait SentenceSplitter {
    /// Sentences of `text` in order, as trimmed slices of the input.
    fn split<'a>(&self, text: &'a str) -> Vec<&'a str>;
}

const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "al.", "approx.", "ca.", "cf.", "co.", "dept.", "dr.", "e.g.", "eq.", "eqs.", "etc.", "fig.",
    "figs.", "i.e.", "inc.", "jr.", "ltd.", "mr.", "mrs.", "ms.", "no.", "nos.", "pp.", "prof.",
    "ref.", "refs.", "resp.", "sec.", "sr.", "st.", "suppl.", "tab.", "univ.", "vol.", "vs.",
];

/// Splits after `.`, `?` or `!` when followed by whitespace and an uppercase
/// letter or digit. A period does not split after a listed abbreviation or
/// after a token made only of single letters and periods (`J.`, `U.S.`).
#[derive(Debug, Clone)]
pub struct RuleSplitter {
    abbreviations: HashSet<String>,
}

impl Default for RuleSplitter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl RuleSplitter {
    pub fn with_abbreviations<I, S>(abbrevs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            abbreviations: abbrevs.into_iter().map(|a| a.as_ref().to_lowercase()).collect(),
        }
    }

    fn period_is_guarded(&self, token: &str) -> bool {
        let token = token
            .trim_start_matches(['(', '[', '{', '"', '\''])
            .to_lowercase();
        if self.abbreviations.contains(&token) {
            return true;
        }
        let body = token.trim_end_matches('.');
        !body.is_empty()
            && body
                .split('.')
                .all(|seg| seg.chars().count() == 1 && seg.chars().all(char::is_alphabetic))
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{2019}' | '\u{201d}')
}

impl SentenceSplitter for RuleSplitter {
    fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut start = 0usize;
        let mut i = 0usize;
        while i < chars.len() {
            let (pos, c) = chars[i];
            if !is_terminator(c) {
                i += 1;
                continue;
            }
            let mut j = i + 1;
            while j < chars.len() && (is_terminator(chars[j].1) || is_closer(chars[j].1)) {
                j += 1;
            }
            if j >= chars.len() || !chars[j].1.is_whitespace() {
                i = j;
                continue;
            }
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            if k >= chars.len() {
                break;
            }
            let next = chars[k].1;
            if !(next.is_uppercase() || next.is_numeric()) {
                i = k;
                continue;
            }
            if c == '.' {
                let word_start = text[start..pos]
                    .rfind(char::is_whitespace)
                    .map_or(start, |w| start + w + 1);
                if self.period_is_guarded(&text[word_start..=pos]) {
                    i = k;
                    continue;
                }
            }
            let sentence = text[start..chars[j].0].trim();
            if !sentence.is_empty() {
                out.push(sentence);
            }
            start = chars[k].0;
            i = k;
        }
        let tail = text[start..].trim();
        if !tail.is_empty() {
            out.push(tail);
        }
        out
    }
}

pub fn split_sentences(text: &str) -> Vec<&str> {
    RuleSplitter::default().split(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_size: usize,
    pub stride: usize,
    pub min_sentences_per_passage: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_size: 10,
            stride: 5,
            min_sentences_per_passage: 2,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WindowConfigError {
    #[error("window_size must be at least 1")]
    ZeroWindow,
    #[error("stride must be in 1..=window_size (got stride {stride}, window {window})")]
    BadStride { stride: usize, window: usize },
}

impl WindowConfig {
    pub fn new(window_size: usize, stride: usize) -> Result<Self, WindowConfigError> {
        let cfg = Self {
            window_size,
            stride,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), WindowConfigError> {
        if self.window_size == 0 {
            return Err(WindowConfigError::ZeroWindow);
        }
        if self.stride == 0 || self.stride > self.window_size {
            return Err(WindowConfigError::BadStride {
                stride: self.stride,
                window: self.window_size,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub doc_id: String,
    pub span_index: usize,
    pub sentence_start: usize,
    /// Exclusive.
    pub sentence_end: usize,
    pub text: String,
}

/// Sentence index ranges for `n` sentences: starts at 0, stride, 2·stride, …,
/// each clipped to `n`, stopping after the first window that reaches the last
/// sentence. Empty when `n` is below the per-passage minimum.
pub fn window_ranges(n: usize, cfg: &WindowConfig) -> Vec<Range<usize>> {
    debug_assert!(cfg.validate().is_ok());
    if n == 0 || n < cfg.min_sentences_per_passage {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut offset = 0;
    loop {
        let end = (offset + cfg.window_size).min(n);
        out.push(offset..end);
        if end == n {
            return out;
        }
        offset += cfg.stride;
    }
}

pub fn window_spans<S: AsRef<str>>(
    sentences: &[S],
    cfg: &WindowConfig,
    doc_id: &str,
) -> Vec<SentenceSpan> {
    window_ranges(sentences.len(), cfg)
        .into_iter()
        .enumerate()
        .map(|(span_index, r)| SentenceSpan {
            doc_id: doc_id.to_string(),
            span_index,
            sentence_start: r.start,
            sentence_end: r.end,
            text: sentences[r]
                .iter()
                .map(AsRef::as_ref)
                .collect::<Vec<_>>()
                .join(" "),
        })
        .collect()
}

/// Cleans and splits every passage, drops passages with fewer than
/// `min_sentences_per_passage` sentences, and windows the remaining
/// sentences of the whole document.
pub fn document_spans(
    doc: &Document,
    cfg: &WindowConfig,
    splitter: &dyn SentenceSplitter,
) -> Vec<SentenceSpan> {
    let mut sentences: Vec<String> = Vec::new();
    for passage in &doc.passages {
        let cleaned = clean_text(passage);
        let split = splitter.split(&cleaned);
        if split.len() >= cfg.min_sentences_per_passage {
            sentences.extend(split.into_iter().map(str::to_string));
        }
    }
    window_spans(&sentences, cfg, &doc.doc_id)
}

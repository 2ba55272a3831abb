//! Word tokenization and the shipped stopword list.

use std::collections::HashSet;

const SHIPPED_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// SHA-256 of `data/stopwords_en.txt`. Changing the list changes every
/// vocabulary built from it, so the digest is pinned and checked in tests.
pub const STOPWORDS_SHA256: &str =
    "bf79ce6e59359c344c9a943000197448bbf97d7ebe80ed8a010aba3f2e462bbd";

/// Lowercased words split on non-alphanumeric boundaries.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stopwords {
    words: HashSet<String>,
}

impl Stopwords {
    /// The English list shipped with the crate.
    pub fn english() -> Self {
        Self::from_list(SHIPPED_STOPWORDS)
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Parses one word per line; blank lines and `#` comments are ignored.
    pub fn from_list(list: &str) -> Self {
        let words = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Lowercased content words of `text`, in order.
    pub fn content_words(&self, text: &str) -> Vec<String> {
        words(text).filter(|w| !self.contains(w)).collect()
    }
}

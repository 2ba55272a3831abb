//! Baselines: n-gram vocabularies, word-cloud counts, and LDA fitted by
//! collapsed Gibbs sampling, plus topic reports and representative questions.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::FrequencyEntry;
use crate::text::Stopwords;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TopicError {
    #[error("max_n must be at least 1")]
    ZeroNgramOrder,
    #[error("vocabulary is empty")]
    EmptyVocab,
    #[error("number of topics must be at least 1")]
    ZeroTopics,
    #[error("token id {id} out of range for vocabulary of {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("topic {topic} out of range (model has {k})")]
    TopicOutOfRange { topic: usize, k: usize },
    #[error("model has no document labels; fit it on labelled texts")]
    Unlabelled,
    #[error("alpha and beta must be positive and finite")]
    BadHyperparameter,
}

/// Every n-gram of order 1..=max_n over `words`, joined with `_`.
pub fn ngrams(words: &[String], max_n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=max_n).flat_map(move |n| words.windows(n).map(|w| w.join("_")))
}

fn count_ngrams<S: AsRef<str>>(texts: &[S], max_n: usize, stopwords: &Stopwords) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for t in texts {
        let words = stopwords.content_words(t.as_ref());
        for g in ngrams(&words, max_n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// N-gram vocabulary with dense ids, sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, u32>,
    min_count: u64,
    max_n: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    entries: Vec<String>,
    min_count: u64,
    max_n: usize,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_entries(r.entries, r.min_count, r.max_n)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            entries: v.entries,
            min_count: v.min_count,
            max_n: v.max_n,
        }
    }
}

impl Vocab {
    fn from_entries(entries: Vec<String>, min_count: u64, max_n: usize) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i as u32))
            .collect();
        Self {
            entries,
            index,
            min_count,
            max_n,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn id(&self, ngram: &str) -> Option<u32> {
        self.index.get(ngram).copied()
    }

    pub fn term(&self, id: u32) -> &str {
        &self.entries[id as usize]
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// In-vocabulary n-gram ids of `text`, in order of n then position.
    pub fn encode(&self, text: &str, stopwords: &Stopwords) -> Vec<u32> {
        let words = stopwords.content_words(text);
        ngrams(&words, self.max_n).filter_map(|g| self.id(&g)).collect()
    }
}

/// Lowercases, drops stopwords, and keeps n-grams up to `max_n` that occur at
/// least `min_count` times across `texts`.
pub fn build_vocab<S: AsRef<str>>(
    texts: &[S],
    max_n: usize,
    min_count: u64,
    stopwords: &Stopwords,
) -> Result<Vocab, TopicError> {
    if max_n == 0 {
        return Err(TopicError::ZeroNgramOrder);
    }
    let mut entries: Vec<String> = count_ngrams(texts, max_n, stopwords)
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .map(|(g, _)| g)
        .collect();
    entries.sort();
    Ok(Vocab::from_entries(entries, min_count, max_n))
}

/// The `top_k` most frequent n-grams (word-cloud weights), count descending
/// then n-gram ascending.
pub fn ngram_frequencies<S: AsRef<str>>(
    texts: &[S],
    max_n: usize,
    stopwords: &Stopwords,
    top_k: usize,
) -> Vec<(String, u64)> {
    let mut counts: Vec<(String, u64)> = count_ngrams(texts, max_n, stopwords).into_iter().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    counts.truncate(top_k);
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub num_topics: usize,
    /// Document–topic prior; `None` means 50 / K.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            num_topics: 20,
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            seed: 13,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.num_topics as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub num_topics: usize,
    pub vocab: Vocab,
    /// K × V topic–term distribution.
    pub phi: Vec<Vec<f64>>,
    /// D × K document–topic distribution.
    pub theta: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Topic id of every token of every document after the final sweep.
    pub assignments: Vec<Vec<u32>>,
    /// Optional per-document labels (e.g. the question text of each row).
    #[serde(default)]
    pub doc_labels: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitReport {
    /// Indices of documents with no in-vocabulary tokens; their theta rows
    /// are the prior mean.
    pub skipped_docs: Vec<usize>,
    pub tokens: usize,
}

/// Collapsed Gibbs sampler state. Topic counts are integers so sweeps are
/// exactly reproducible from the seed.
pub struct GibbsSampler<'a> {
    docs: &'a [Vec<u32>],
    k: usize,
    v: usize,
    alpha: f64,
    beta: f64,
    rng: ChaCha8Rng,
    z: Vec<Vec<u32>>,
    doc_topic: Vec<u32>,
    topic_term: Vec<u32>,
    topic_total: Vec<u32>,
    weights: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(docs: &'a [Vec<u32>], vocab_size: usize, cfg: &LdaConfig) -> Result<Self, TopicError> {
        if cfg.num_topics == 0 {
            return Err(TopicError::ZeroTopics);
        }
        if vocab_size == 0 {
            return Err(TopicError::EmptyVocab);
        }
        let (alpha, beta) = (cfg.alpha(), cfg.beta);
        if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0) {
            return Err(TopicError::BadHyperparameter);
        }
        if let Some(&id) = docs.iter().flatten().find(|&&w| w as usize >= vocab_size) {
            return Err(TopicError::TokenOutOfRange { id, size: vocab_size });
        }
        let k = cfg.num_topics;
        let mut s = Self {
            docs,
            k,
            v: vocab_size,
            alpha,
            beta,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            z: Vec::with_capacity(docs.len()),
            doc_topic: vec![0; docs.len() * k],
            topic_term: vec![0; k * vocab_size],
            topic_total: vec![0; k],
            weights: vec![0.0; k],
        };
        for (d, doc) in docs.iter().enumerate() {
            let mut zd = Vec::with_capacity(doc.len());
            for &w in doc {
                let t = s.rng.gen_range(0..k);
                s.doc_topic[d * k + t] += 1;
                s.topic_term[t * s.v + w as usize] += 1;
                s.topic_total[t] += 1;
                zd.push(t as u32);
            }
            s.z.push(zd);
        }
        Ok(s)
    }

    /// Resamples every token's topic once from
    /// P(z = k) ∝ (n_dk + α)(n_kw + β) / (n_k + Vβ).
    pub fn sweep(&mut self) {
        let (k, v) = (self.k, self.v);
        let v_beta = v as f64 * self.beta;
        for (d, doc) in self.docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let w = w as usize;
                let old = self.z[d][i] as usize;
                self.doc_topic[d * k + old] -= 1;
                self.topic_term[old * v + w] -= 1;
                self.topic_total[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (self.doc_topic[d * k + t] as f64 + self.alpha)
                        * (self.topic_term[t * v + w] as f64 + self.beta)
                        / (self.topic_total[t] as f64 + v_beta);
                    total += p;
                    self.weights[t] = total;
                }
                let u = self.rng.gen::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.doc_topic[d * k + new] += 1;
                self.topic_term[new * v + w] += 1;
                self.topic_total[new] += 1;
                self.z[d][i] = new as u32;
            }
        }
    }

    /// Per-topic token counts; they always sum to the corpus token count.
    pub fn topic_totals(&self) -> &[u32] {
        &self.topic_total
    }

    pub fn assignments(&self) -> &[Vec<u32>] {
        &self.z
    }

    pub fn phi(&self) -> Vec<Vec<f64>> {
        let v_beta = self.v as f64 * self.beta;
        (0..self.k)
            .map(|t| {
                let denom = self.topic_total[t] as f64 + v_beta;
                (0..self.v)
                    .map(|w| (self.topic_term[t * self.v + w] as f64 + self.beta) / denom)
                    .collect()
            })
            .collect()
    }

    pub fn theta(&self) -> Vec<Vec<f64>> {
        let k_alpha = self.k as f64 * self.alpha;
        self.docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                let denom = doc.len() as f64 + k_alpha;
                (0..self.k)
                    .map(|t| (self.doc_topic[d * self.k + t] as f64 + self.alpha) / denom)
                    .collect()
            })
            .collect()
    }
}

/// Fits LDA on documents of vocabulary ids. The point estimate comes from
/// the final sweep; there is no burn-in averaging.
pub fn fit_lda(docs: &[Vec<u32>], vocab: &Vocab, cfg: &LdaConfig) -> Result<(TopicModel, FitReport), TopicError> {
    let mut sampler = GibbsSampler::new(docs, vocab.len(), cfg)?;
    for _ in 0..cfg.iterations {
        sampler.sweep();
    }
    let report = FitReport {
        skipped_docs: docs
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_empty())
            .map(|(i, _)| i)
            .collect(),
        tokens: docs.iter().map(Vec::len).sum(),
    };
    if !report.skipped_docs.is_empty() {
        tracing::info!(count = report.skipped_docs.len(), "documents without in-vocabulary tokens skipped");
    }
    let model = TopicModel {
        num_topics: cfg.num_topics,
        vocab: vocab.clone(),
        phi: sampler.phi(),
        theta: sampler.theta(),
        alpha: sampler.alpha,
        beta: sampler.beta,
        iterations: cfg.iterations,
        seed: cfg.seed,
        assignments: sampler.z,
        doc_labels: Vec::new(),
    };
    Ok((model, report))
}

/// The `k` highest-weight terms of `topic`, ties broken by term ascending.
pub fn top_terms(model: &TopicModel, k: usize, topic: usize) -> Result<Vec<(String, f64)>, TopicError> {
    let row = model.phi.get(topic).ok_or(TopicError::TopicOutOfRange {
        topic,
        k: model.num_topics,
    })?;
    let mut terms: Vec<(String, f64)> = row
        .iter()
        .enumerate()
        .map(|(w, &p)| (model.vocab.term(w as u32).to_string(), p))
        .collect();
    terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    terms.truncate(k);
    Ok(terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeQuestion {
    pub topic: usize,
    pub question: String,
    /// span_count × theta.
    pub score: f64,
}

/// For each topic, the question maximizing its span count times its topic
/// probability, ties broken by question ascending. Questions absent from
/// `freq` are never chosen; a topic gets `None` if no labelled question has a
/// count.
pub fn representative_questions(
    model: &TopicModel,
    freq: &[FrequencyEntry],
) -> Result<Vec<Option<RepresentativeQuestion>>, TopicError> {
    if model.doc_labels.len() != model.theta.len() {
        return Err(TopicError::Unlabelled);
    }
    let counts: HashMap<&str, u64> = freq.iter().map(|e| (e.question.as_str(), e.span_count)).collect();
    let candidates: Vec<(&str, u64, &Vec<f64>)> = model
        .doc_labels
        .iter()
        .zip(&model.theta)
        .filter_map(|(q, row)| counts.get(q.as_str()).map(|&c| (q.as_str(), c, row)))
        .collect();
    Ok((0..model.num_topics)
        .map(|topic| {
            candidates
                .iter()
                .map(|&(q, c, row)| (q, c as f64 * row[topic]))
                .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(q, score)| RepresentativeQuestion {
                    topic,
                    question: q.to_string(),
                    score,
                })
        })
        .collect())
}

/// Groups identical labels; handy for deduplicating question documents.
pub fn distinct_in_order<I: IntoIterator<Item = String>>(items: I) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in items {
        if seen.insert(item.clone()) {
            out.push(item);
        }
    }
    out
}

//! Greedy token matching over contextual embeddings, candidate ranking, and
//! the two human-evaluation protocols built on it.
//!
//! Scores follow the usual greedy-matching definition without IDF weights:
//! recall averages, over reference tokens, the best cosine similarity to any
//! candidate token; precision does the same from the candidate side; F1 is
//! their harmonic mean.
//!
//! Embedding wire protocol (`POST {endpoint}/embed`):
//!
//! ```json
//! request:  {"texts": ["..."]}
//! response: {"tokens": [["..."]], "vectors": [[[0.1, ...], ...]]}
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::FrequencyEntry;
use crate::generation::{endpoint_url, http_client, post_json, BackendError};

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("empty token sequence for `{0}`")]
    EmptySequence(String),
    #[error("tokens and vectors differ in length ({tokens} vs {vectors})")]
    LengthMismatch { tokens: usize, vectors: usize },
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("token `{0}` has a zero or non-finite vector")]
    DegenerateVector(String),
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding backend failed: {0}")]
    Backend(#[from] BackendError),
    #[error("unlabelled rows: {0:?}")]
    UnsetLabels(Vec<usize>),
    #[error("bad annotation sheet: {0}")]
    Sheet(String),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Token strings with unit-normalized vectors, one per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSeq {
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl TokenEmbeddingSeq {
    /// Validates shapes and normalizes every vector to unit length.
    pub fn new(tokens: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, MatchError> {
        if tokens.len() != vectors.len() {
            return Err(MatchError::LengthMismatch {
                tokens: tokens.len(),
                vectors: vectors.len(),
            });
        }
        if tokens.is_empty() {
            return Err(MatchError::EmptySequence(String::new()));
        }
        let dim = vectors[0].len();
        let mut normalized = Vec::with_capacity(vectors.len());
        for (tok, v) in tokens.iter().zip(vectors) {
            if v.len() != dim {
                return Err(MatchError::DimensionMismatch(dim, v.len()));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(MatchError::DegenerateVector(tok.clone()));
            }
            normalized.push(v.into_iter().map(|x| x / norm).collect());
        }
        Ok(Self {
            tokens,
            vectors: normalized,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let sum = precision + recall;
        let f1 = if sum > 0.0 {
            2.0 * precision * recall / sum
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Greedy-matching precision, recall and F1 of `candidate` against `reference`.
pub fn bertscore(reference: &TokenEmbeddingSeq, candidate: &TokenEmbeddingSeq) -> Result<Scores, MatchError> {
    if reference.dim() != candidate.dim() {
        return Err(MatchError::DimensionMismatch(reference.dim(), candidate.dim()));
    }
    // sim[i][j] = cos(reference_i, candidate_j)
    let sim: Vec<Vec<f64>> = reference
        .vectors
        .iter()
        .map(|r| candidate.vectors.iter().map(|c| dot(r, c)).collect())
        .collect();
    let recall = sim
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    let precision = (0..candidate.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / candidate.len() as f64;
    Ok(Scores::from_pr(precision, recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub reference: String,
    pub candidate: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub trait Embedder: Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<TokenEmbeddingSeq>, MatchError>;
}

/// Offline embedder: each lowercased word maps to a pseudo-random unit vector
/// seeded by a SHA-256 of the seed and the word. Identical strings embed
/// identically, distinct words are nearly orthogonal in high dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self { dim: 64, seed: 13 }
    }
}

impl StubEmbedder {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    pub fn embed_one(&self, text: &str) -> Result<TokenEmbeddingSeq, MatchError> {
        let tokens: Vec<String> = crate::text::words(text).collect();
        if tokens.is_empty() {
            return Err(MatchError::EmptySequence(text.to_string()));
        }
        let vectors = tokens.iter().map(|t| self.token_vector(t)).collect();
        TokenEmbeddingSeq::new(tokens, vectors)
    }
}

impl Embedder for StubEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<TokenEmbeddingSeq>, MatchError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EmbedResponse {
    pub tokens: Vec<Vec<String>>,
    pub vectors: Vec<Vec<Vec<f64>>>,
}

/// Client for the inference service's `/embed` endpoint.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    url: String,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        Self {
            client: http_client(timeout),
            url: endpoint_url(endpoint, "embed"),
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<TokenEmbeddingSeq>, MatchError> {
        let req = EmbedRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
        };
        let resp: EmbedResponse = post_json(&self.client, &self.url, &req)?;
        if resp.tokens.len() != texts.len() || resp.vectors.len() != texts.len() {
            return Err(BackendError::Protocol(format!(
                "expected {} entries, got {} token lists and {} vector lists",
                texts.len(),
                resp.tokens.len(),
                resp.vectors.len()
            ))
            .into());
        }
        resp.tokens
            .into_iter()
            .zip(resp.vectors)
            .zip(texts)
            .map(|((toks, vecs), text)| {
                TokenEmbeddingSeq::new(toks, vecs).map_err(|e| match e {
                    MatchError::EmptySequence(_) => MatchError::EmptySequence(text.to_string()),
                    other => other,
                })
            })
            .collect()
    }
}

/// Memoizes embeddings by text and fetches misses in batches.
pub struct EmbeddingCache<'a> {
    embedder: &'a dyn Embedder,
    batch_size: usize,
    cache: HashMap<String, TokenEmbeddingSeq>,
}

impl<'a> EmbeddingCache<'a> {
    pub fn new(embedder: &'a dyn Embedder, batch_size: usize) -> Self {
        Self {
            embedder,
            batch_size: batch_size.max(1),
            cache: HashMap::new(),
        }
    }

    pub fn ensure<'t, I: IntoIterator<Item = &'t str>>(&mut self, texts: I) -> Result<(), MatchError> {
        let missing: Vec<&str> = texts
            .into_iter()
            .filter(|t| !self.cache.contains_key(*t))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for chunk in missing.chunks(self.batch_size) {
            let seqs = self.embedder.embed(chunk)?;
            if seqs.len() != chunk.len() {
                return Err(BackendError::Protocol("embedding count mismatch".into()).into());
            }
            for (t, s) in chunk.iter().zip(seqs) {
                self.cache.insert(t.to_string(), s);
            }
        }
        Ok(())
    }

    pub fn get(&self, text: &str) -> Option<&TokenEmbeddingSeq> {
        self.cache.get(text)
    }
}

fn by_f1_then_text(a: &MatchCandidate, b: &MatchCandidate) -> Ordering {
    b.f1.total_cmp(&a.f1).then_with(|| a.candidate.cmp(&b.candidate))
}

fn rank_cached(
    reference: &str,
    candidates: &BTreeSet<&str>,
    cache: &EmbeddingCache<'_>,
    k: usize,
) -> Result<Vec<MatchCandidate>, MatchError> {
    let ref_seq = cache.get(reference).expect("reference embedded");
    let mut scored = candidates
        .iter()
        .map(|c| {
            let s = bertscore(ref_seq, cache.get(c).expect("candidate embedded"))?;
            Ok(MatchCandidate {
                reference: reference.to_string(),
                candidate: c.to_string(),
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
            })
        })
        .collect::<Result<Vec<_>, MatchError>>()?;
    scored.sort_by(by_f1_then_text);
    scored.truncate(k);
    Ok(scored)
}

/// Top-`k` distinct candidates by F1 against `reference`, ties broken by
/// candidate text.
pub fn rank_candidates(
    reference: &str,
    candidates: &[String],
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<MatchCandidate>, MatchError> {
    if k == 0 {
        return Err(MatchError::ZeroK);
    }
    if candidates.is_empty() {
        return Err(MatchError::NoCandidates);
    }
    let distinct: BTreeSet<&str> = candidates.iter().map(String::as_str).collect();
    let mut cache = EmbeddingCache::new(embedder, 64);
    cache.ensure(std::iter::once(reference).chain(distinct.iter().copied()))?;
    rank_cached(reference, &distinct, &cache, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, PartialOrd, Ord)]
pub enum Label {
    #[default]
    Unset,
    NoMatch,
    Weak,
    Strong,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Unset => "",
            Label::Strong => "strong",
            Label::Weak => "weak",
            Label::NoMatch => "none",
        }
    }

    pub fn is_match(self) -> bool {
        matches!(self, Label::Strong | Label::Weak)
    }
}

impl FromStr for Label {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "" | "unset" => Ok(Label::Unset),
            "strong" => Ok(Label::Strong),
            "weak" => Ok(Label::Weak),
            "none" | "no" | "no match" => Ok(Label::NoMatch),
            other => Err(MatchError::Sheet(format!("unknown label `{other}`"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const SHEET_CANDIDATES: usize = 3;
pub const CORPUS_CONTEXT: &str = "corpus";

const SHEET_PREAMBLE: &str = "\
# Annotation sheet. Fill the `label` column of every row with one of:
#   strong  a candidate asks the same question as the reference
#   weak    a candidate is broader than the reference, but its answer contains the reference's answer
#   none    no candidate matches
# Label the row by its best-matching candidate. Lines starting with '#' are ignored.
";

#[derive(Debug, Clone, PartialEq)]
pub struct SheetRow {
    pub reference: String,
    /// Source document id, or `corpus` for the frequent-question protocol.
    pub context: String,
    /// Up to three `(candidate, f1)` pairs, best first.
    pub candidates: Vec<(String, f64)>,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSheet {
    pub rows: Vec<SheetRow>,
}

impl AnnotationSheet {
    /// CSV: `reference,context,cand1,f1_1,cand2,f1_2,cand3,f1_3,label`,
    /// preceded by `#` comment lines describing the labels.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), MatchError> {
        w.write_all(SHEET_PREAMBLE.as_bytes())?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "reference", "context", "cand1", "f1_1", "cand2", "f1_2", "cand3", "f1_3", "label",
        ])?;
        for row in &self.rows {
            let mut rec = vec![row.reference.clone(), row.context.clone()];
            for i in 0..SHEET_CANDIDATES {
                match row.candidates.get(i) {
                    Some((c, f1)) => {
                        rec.push(c.clone());
                        rec.push(format!("{f1:.6}"));
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            rec.push(row.label.as_str().to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, MatchError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 + 2 * SHEET_CANDIDATES {
                return Err(MatchError::Sheet(format!("row {}: expected 9 columns", i + 1)));
            }
            let mut candidates = Vec::new();
            for c in 0..SHEET_CANDIDATES {
                let text = &rec[2 + 2 * c];
                if text.is_empty() {
                    continue;
                }
                let f1: f64 = rec[3 + 2 * c]
                    .parse()
                    .map_err(|_| MatchError::Sheet(format!("row {}: bad f1 `{}`", i + 1, &rec[3 + 2 * c])))?;
                candidates.push((text.to_string(), f1));
            }
            rows.push(SheetRow {
                reference: rec[0].to_string(),
                context: rec[1].to_string(),
                candidates,
                label: rec[8].parse()?,
            });
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPair {
    pub question: String,
    #[serde(default)]
    pub doc_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// The document exists but produced no questions.
    NoQuestions,
    /// The document is not in the corpus.
    UnknownDocument,
    /// The gold entry carries no document id.
    MissingDocId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedRow {
    pub reference: String,
    pub doc_id: Option<String>,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutcome {
    pub sheet: AnnotationSheet,
    pub excluded: Vec<ExcludedRow>,
}

/// An experiment that stopped part-way; `completed` holds the rows finished
/// before the failure so they can be checkpointed.
#[derive(Debug, thiserror::Error)]
#[error("experiment stopped after {} rows: {source}", completed.rows.len())]
pub struct ExperimentError {
    pub completed: AnnotationSheet,
    #[source]
    pub source: MatchError,
}

fn row_from(reference: &str, context: &str, ranked: Vec<MatchCandidate>) -> SheetRow {
    SheetRow {
        reference: reference.to_string(),
        context: context.to_string(),
        candidates: ranked.into_iter().map(|m| (m.candidate, m.f1)).collect(),
        label: Label::Unset,
    }
}

/// One sheet row per gold (reference, document) pair, ranking only that
/// document's own questions.
///
/// `known_docs`, when given, separates documents missing from the corpus from
/// documents that produced no questions.
pub fn per_document_experiment(
    gold: &[GoldPair],
    questions_by_doc: &BTreeMap<String, Vec<String>>,
    known_docs: Option<&HashSet<String>>,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<ExperimentOutcome, ExperimentError> {
    let mut outcome = ExperimentOutcome::default();
    let mut cache = EmbeddingCache::new(embedder, 64);
    for pair in gold {
        let exclude = |reason| ExcludedRow {
            reference: pair.question.clone(),
            doc_id: pair.doc_id.clone(),
            reason,
        };
        let Some(doc_id) = &pair.doc_id else {
            outcome.excluded.push(exclude(ExclusionReason::MissingDocId));
            continue;
        };
        if known_docs.is_some_and(|known| !known.contains(doc_id)) {
            outcome.excluded.push(exclude(ExclusionReason::UnknownDocument));
            continue;
        }
        let distinct: BTreeSet<&str> = questions_by_doc
            .get(doc_id)
            .map(|qs| qs.iter().map(String::as_str).collect())
            .unwrap_or_default();
        if distinct.is_empty() {
            outcome.excluded.push(exclude(ExclusionReason::NoQuestions));
            continue;
        }
        let ranked = cache
            .ensure(std::iter::once(pair.question.as_str()).chain(distinct.iter().copied()))
            .and_then(|_| rank_cached(&pair.question, &distinct, &cache, k));
        match ranked {
            Ok(r) => outcome.sheet.rows.push(row_from(&pair.question, doc_id, r)),
            Err(source) => {
                return Err(ExperimentError {
                    completed: outcome.sheet,
                    source,
                })
            }
        }
    }
    Ok(outcome)
}

/// One sheet row per reference, ranking the whole frequent-question list.
pub fn frequent_question_experiment(
    gold: &[String],
    frequent: &[FrequencyEntry],
    embedder: &dyn Embedder,
    k: usize,
) -> Result<AnnotationSheet, ExperimentError> {
    let fail = |completed, source| ExperimentError { completed, source };
    if frequent.is_empty() {
        return Err(fail(AnnotationSheet::default(), MatchError::NoCandidates));
    }
    let distinct: BTreeSet<&str> = frequent.iter().map(|e| e.question.as_str()).collect();
    let mut cache = EmbeddingCache::new(embedder, 64);
    if let Err(e) = cache.ensure(distinct.iter().copied()) {
        return Err(fail(AnnotationSheet::default(), e));
    }
    let mut sheet = AnnotationSheet::default();
    for reference in gold {
        let ranked = cache
            .ensure([reference.as_str()])
            .and_then(|_| rank_cached(reference, &distinct, &cache, k));
        match ranked {
            Ok(r) => sheet.rows.push(row_from(reference, CORPUS_CONTEXT, r)),
            Err(e) => return Err(fail(sheet, e)),
        }
    }
    Ok(sheet)
}

/// `count` out of `of`, kept exact; `percent` is rounded half-up for display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    pub count: u64,
    pub of: u64,
    pub percent: u64,
}

impl Share {
    pub fn new(count: u64, of: u64) -> Self {
        let percent = if of == 0 {
            0
        } else {
            (200 * count + of) / (2 * of)
        };
        Self { count, of, percent }
    }

    pub fn fraction(&self) -> String {
        format!("{}/{}", self.count, self.of)
    }
}

impl fmt::Display for Share {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}%)", self.count, self.percent)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub total: u64,
    pub strong: Share,
    pub weak: Share,
    pub none: Share,
    pub matched: Share,
    /// Matched rows and total rows per reference question.
    pub per_reference: BTreeMap<String, (u64, u64)>,
}

impl fmt::Display for AnnotationSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total   {}", self.total)?;
        writeln!(f, "match   {}", self.matched)?;
        writeln!(f, "strong  {}", self.strong)?;
        writeln!(f, "weak    {}", self.weak)?;
        write!(f, "none    {}", self.none)
    }
}

pub fn summarize_annotations(sheet: &AnnotationSheet) -> Result<AnnotationSummary, MatchError> {
    let unset: Vec<usize> = sheet
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label == Label::Unset)
        .map(|(i, _)| i + 1)
        .collect();
    if !unset.is_empty() {
        return Err(MatchError::UnsetLabels(unset));
    }
    let total = sheet.rows.len() as u64;
    let count = |l: Label| sheet.rows.iter().filter(|r| r.label == l).count() as u64;
    let (strong, weak, none) = (count(Label::Strong), count(Label::Weak), count(Label::NoMatch));
    let mut per_reference: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for r in &sheet.rows {
        let slot = per_reference.entry(r.reference.clone()).or_default();
        slot.0 += u64::from(r.label.is_match());
        slot.1 += 1;
    }
    Ok(AnnotationSummary {
        total,
        strong: Share::new(strong, total),
        weak: Share::new(weak, total),
        none: Share::new(none, total),
        matched: Share::new(strong + weak, total),
        per_reference,
    })
}

//! Question generation: the backend interface, the HTTP client for the
//! inference service, a deterministic mock, and the batched driver.
//!
//! Wire protocol (`POST {endpoint}/generate`):
//!
//! ```json
//! request:  {"texts": ["..."], "beams": 4, "max_tokens": 64, "num_return": 1}
//! response: {"questions": [["..."], ...]}
//! ```
//!
//! The outer response list is parallel to `texts`. Any non-200 status is an
//! error.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::preprocess::SentenceSpan;
use crate::text::Stopwords;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub beams: usize,
    pub max_question_tokens: usize,
    pub questions_per_span: usize,
    /// Base URL of the inference service; only used by the remote backend.
    pub endpoint: Option<String>,
    pub batch_size: usize,
    pub max_inflight_requests: usize,
    /// Extra attempts after the first failed call.
    pub max_retries: usize,
    pub request_timeout_secs: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            beams: 4,
            max_question_tokens: 64,
            questions_per_span: 1,
            endpoint: None,
            batch_size: 16,
            max_inflight_requests: 4,
            max_retries: 2,
            request_timeout_secs: 300,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |msg: &str| Err(GenerateError::Config(msg.to_string()));
        if self.beams == 0 {
            return bad("beams must be at least 1");
        }
        if self.questions_per_span == 0 {
            return bad("questions_per_span must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_inflight_requests == 0 {
            return bad("max_inflight_requests must be at least 1");
        }
        Ok(())
    }

    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            beams: self.beams,
            max_tokens: self.max_question_tokens,
            num_return: self.questions_per_span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeParams {
    pub beams: usize,
    pub max_tokens: usize,
    pub num_return: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question: String,
    pub doc_id: String,
    pub span_index: usize,
    pub publish_date: Option<NaiveDate>,
    pub backend_id: String,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Transport failures are not tied to any particular input.
    pub fn is_transport(&self) -> bool {
        matches!(self, Self::Unreachable(_))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("generation aborted after {attempts} attempts: {source}")]
    Unreachable { attempts: usize, source: BackendError },
}

pub trait QuestionBackend: Sync {
    /// Tag copied into every record produced by this backend.
    fn id(&self) -> &str;

    /// Returns `num_return` questions per input text, parallel to `texts`.
    fn generate_batch(
        &self,
        texts: &[&str],
        params: &DecodeParams,
    ) -> Result<Vec<Vec<String>>, BackendError>;
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct GenerateRequest {
    pub texts: Vec<String>,
    pub beams: usize,
    pub max_tokens: usize,
    pub num_return: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct GenerateResponse {
    pub questions: Vec<Vec<String>>,
}

pub(crate) fn http_client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .expect("HTTP client construction")
}

pub(crate) fn post_json<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &Req,
) -> Result<Resp, BackendError> {
    let resp = client
        .post(url)
        .json(body)
        .send()
        .map_err(|e| BackendError::Unreachable(format!("{url}: {e}")))?;
    let status = resp.status();
    if status != reqwest::StatusCode::OK {
        let body = resp.text().unwrap_or_default();
        return Err(BackendError::Rejected {
            status: status.as_u16(),
            body,
        });
    }
    resp.json()
        .map_err(|e| BackendError::Protocol(format!("{url}: undecodable response: {e}")))
}

pub(crate) fn endpoint_url(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path)
}

/// Client for the inference service's `/generate` endpoint.
pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    url: String,
    id: String,
}

impl RemoteBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        Self {
            client: http_client(timeout),
            url: endpoint_url(endpoint, "generate"),
            id: format!("remote:{}", endpoint.trim_end_matches('/')),
        }
    }
}

impl QuestionBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate_batch(
        &self,
        texts: &[&str],
        params: &DecodeParams,
    ) -> Result<Vec<Vec<String>>, BackendError> {
        let req = GenerateRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
            beams: params.beams,
            max_tokens: params.max_tokens,
            num_return: params.num_return,
        };
        let resp: GenerateResponse = post_json(&self.client, &self.url, &req)?;
        Ok(resp.questions)
    }
}

pub const MOCK_SENTINEL: &str = "what is this text about";

/// Content words of `text` ranked by frequency (descending), ties broken
/// lexicographically.
fn ranked_content_words(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for w in stopwords.content_words(text) {
        *counts.entry(w).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().map(|(w, _)| w).collect()
}

/// `"what is <w>"` where `w` is the lexicographically smallest of the most
/// frequent non-stopword unigrams of `text`.
pub fn mock_generate(text: &str) -> String {
    mock_questions(text, 1, &Stopwords::english()).remove(0)
}

/// The `n` best-ranked mock questions; positions past the number of distinct
/// content words hold the sentinel question.
pub fn mock_questions(text: &str, n: usize, stopwords: &Stopwords) -> Vec<String> {
    let ranked = ranked_content_words(text, stopwords);
    (0..n)
        .map(|i| match ranked.get(i) {
            Some(w) => format!("what is {w}"),
            None => MOCK_SENTINEL.to_string(),
        })
        .collect()
}

/// Deterministic stand-in for the generation service.
pub struct MockBackend {
    stopwords: Stopwords,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self {
            stopwords: Stopwords::english(),
        }
    }
}

impl QuestionBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn generate_batch(
        &self,
        texts: &[&str],
        params: &DecodeParams,
    ) -> Result<Vec<Vec<String>>, BackendError> {
        Ok(texts
            .iter()
            .map(|t| mock_questions(t, params.num_return, &self.stopwords))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanFailure {
    pub doc_id: String,
    pub span_index: usize,
    pub error: String,
}

/// Counts for one generation run. Merging is associative and commutative
/// apart from the order of `failures`, which is restored by input order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub spans: usize,
    pub records: usize,
    pub calls: usize,
    pub retries: usize,
    /// Spans that produced fewer than `questions_per_span` questions.
    pub short_spans: usize,
    pub failures: Vec<SpanFailure>,
}

impl GenerationSummary {
    fn merge(&mut self, other: GenerationSummary) {
        self.spans += other.spans;
        self.records += other.records;
        self.calls += other.calls;
        self.retries += other.retries;
        self.short_spans += other.short_spans;
        self.failures.extend(other.failures);
    }
}

#[derive(Debug, Clone, Default)]
pub struct GenerationOutput {
    pub records: Vec<QuestionRecord>,
    pub summary: GenerationSummary,
}

struct BatchContext<'a> {
    backend: &'a dyn QuestionBackend,
    params: DecodeParams,
    max_retries: usize,
    dates: &'a HashMap<String, NaiveDate>,
}

impl BatchContext<'_> {
    fn call(
        &self,
        texts: &[&str],
        summary: &mut GenerationSummary,
    ) -> Result<Vec<Vec<String>>, BackendError> {
        let mut last = None;
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                summary.retries += 1;
            }
            summary.calls += 1;
            match self.backend.generate_batch(texts, &self.params) {
                Ok(out) if out.len() == texts.len() => return Ok(out),
                Ok(out) => {
                    last = Some(BackendError::Protocol(format!(
                        "expected {} question lists, got {}",
                        texts.len(),
                        out.len()
                    )))
                }
                Err(e) => last = Some(e),
            }
            if let Some(e) = &last {
                tracing::warn!(attempt, batch = texts.len(), "generation call failed: {e}");
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn emit(&self, span: &SentenceSpan, questions: Vec<String>, out: &mut BatchResult) {
        let kept: Vec<String> = questions
            .into_iter()
            .map(|q| q.trim().to_string())
            .filter(|q| !q.is_empty())
            .take(self.params.num_return)
            .collect();
        if kept.is_empty() {
            self.fail(span, "backend returned no non-empty question".into(), out);
            return;
        }
        if kept.len() < self.params.num_return {
            out.summary.short_spans += 1;
        }
        let date = self.dates.get(&span.doc_id).copied();
        for question in kept {
            out.records.push(QuestionRecord {
                question,
                doc_id: span.doc_id.clone(),
                span_index: span.span_index,
                publish_date: date,
                backend_id: self.backend.id().to_string(),
            });
        }
    }

    fn fail(&self, span: &SentenceSpan, error: String, out: &mut BatchResult) {
        tracing::warn!(doc_id = %span.doc_id, span_index = span.span_index, "span skipped: {error}");
        out.summary.failures.push(SpanFailure {
            doc_id: span.doc_id.clone(),
            span_index: span.span_index,
            error,
        });
    }

    fn run(&self, spans: &[SentenceSpan]) -> Result<BatchResult, GenerateError> {
        let mut out = BatchResult::default();
        out.summary.spans = spans.len();
        let texts: Vec<&str> = spans.iter().map(|s| s.text.as_str()).collect();
        match self.call(&texts, &mut out.summary) {
            Ok(lists) => {
                for (span, qs) in spans.iter().zip(lists) {
                    self.emit(span, qs, &mut out);
                }
            }
            Err(e) if e.is_transport() => return Err(self.unreachable(e)),
            Err(e) if spans.len() == 1 => self.fail(&spans[0], e.to_string(), &mut out),
            Err(e) => {
                tracing::warn!("batch failed ({e}); retrying spans individually");
                for span in spans {
                    match self.call(&[span.text.as_str()], &mut out.summary) {
                        Ok(mut lists) => self.emit(span, lists.remove(0), &mut out),
                        Err(e) if e.is_transport() => return Err(self.unreachable(e)),
                        Err(e) => self.fail(span, e.to_string(), &mut out),
                    }
                }
            }
        }
        out.summary.records = out.records.len();
        Ok(out)
    }

    fn unreachable(&self, source: BackendError) -> GenerateError {
        GenerateError::Unreachable {
            attempts: self.max_retries + 1,
            source,
        }
    }
}

#[derive(Default)]
struct BatchResult {
    records: Vec<QuestionRecord>,
    summary: GenerationSummary,
}

/// Generates questions for every span.
///
/// Spans are sent in batches of `batch_size` with at most
/// `max_inflight_requests` calls in flight. Output order follows input order
/// regardless of completion order. A failing batch is retried, then split
/// into single-span calls so one bad span does not sink its neighbours; a
/// transport failure that survives the retry budget aborts the run.
pub fn generate(
    spans: &[SentenceSpan],
    dates: &HashMap<String, NaiveDate>,
    cfg: &GenerationConfig,
    backend: &dyn QuestionBackend,
) -> Result<GenerationOutput, GenerateError> {
    cfg.validate()?;
    let ctx = BatchContext {
        backend,
        params: cfg.decode_params(),
        max_retries: cfg.max_retries,
        dates,
    };
    let batches: Vec<&[SentenceSpan]> = spans.chunks(cfg.batch_size).collect();
    let slots: Vec<Mutex<Option<Result<BatchResult, GenerateError>>>> =
        batches.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = cfg.max_inflight_requests.min(batches.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(batch) = batches.get(i) else { return };
                let res = ctx.run(batch);
                if res.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                *slots[i].lock().expect("slot lock") = Some(res);
            });
        }
    });

    let mut output = GenerationOutput::default();
    for slot in slots {
        match slot.into_inner().expect("slot lock") {
            Some(Ok(batch)) => {
                output.records.extend(batch.records);
                output.summary.merge(batch.summary);
            }
            Some(Err(e)) => return Err(e),
            // Not reached: only skipped after another batch aborted.
            None => continue,
        }
    }
    Ok(output)
}

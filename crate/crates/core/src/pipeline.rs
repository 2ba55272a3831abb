//! End-to-end run: ingest → spans → generate → postprocess → aggregate, with
//! optional time series and match sheets.
//!
//! Every stage writes its artifact into the output directory and appends an
//! event to `manifest.json`. A rerun with the same configuration skips
//! stages whose event and artifacts are already present.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{
    count_frequencies, filter_by_doc_frequency, keyword_group_series, read_frequency_csv,
    unique_questions, write_frequency_csv, write_series_csv, FrequencyEntry, PhraseMatch,
    TimeBucket,
};
use crate::corpus::{filter_corpus, load_corpus, CorpusFilter, CorpusFormat, Document, Strictness};
use crate::generation::{generate, GenerationConfig, MockBackend, QuestionBackend, QuestionRecord, RemoteBackend};
use crate::jsonl;
use crate::matching::{
    frequent_question_experiment, per_document_experiment, AnnotationSheet, Embedder, GoldPair,
    RemoteEmbedder, StubEmbedder, SHEET_CANDIDATES,
};
use crate::postprocess::{filter_questions, normalize_with, FilterConfig, Normalization};
use crate::preprocess::{document_spans, RuleSplitter, SentenceSpan, WindowConfig};
use crate::TOOL_VERSION;

/// Environment variable that overrides the backend endpoint of a config.
pub const ENDPOINT_ENV: &str = "QMINE_ENDPOINT";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("cannot read config {path}: {source}")]
    ConfigIo { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("input file not found: {0}")]
    MissingInput(PathBuf),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Spans,
    Generate,
    Postprocess,
    Aggregate,
    Timeseries,
    Match,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Spans,
        Stage::Generate,
        Stage::Postprocess,
        Stage::Aggregate,
        Stage::Timeseries,
        Stage::Match,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Spans => "spans",
            Stage::Generate => "generate",
            Stage::Postprocess => "postprocess",
            Stage::Aggregate => "aggregate",
            Stage::Timeseries => "timeseries",
            Stage::Match => "match",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    pub filter: FilterConfig,
    pub normalization: Normalization,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            normalization: Normalization::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateConfig {
    pub top: usize,
    pub min_docs: u64,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self { top: 1000, min_docs: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeseriesConfig {
    /// Group label → phrases; a record counts for a group if its question
    /// contains any phrase.
    pub groups: BTreeMap<String, Vec<String>>,
    pub bucket: TimeBucket,
    pub phrase_match: PhraseMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// JSON lines of `{"question": ..., "doc_id": ...}`.
    pub gold: PathBuf,
    #[serde(default)]
    pub embedder: EmbedderKind,
    #[serde(default = "default_candidates")]
    pub candidates: usize,
}

fn default_candidates() -> usize {
    SHEET_CANDIDATES
}

/// Everything a run needs. Mirrors the manifest so a manifest's `config`
/// can be fed back in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub strict: bool,
    pub filter: CorpusFilter,
    pub window: WindowConfig,
    pub backend: BackendKind,
    pub generation: GenerationConfig,
    pub postprocess: PostprocessConfig,
    pub aggregate: AggregateConfig,
    pub timeseries: Option<TimeseriesConfig>,
    #[serde(rename = "match")]
    pub matching: Option<MatchConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("corpus.jsonl"),
            output_dir: PathBuf::from("run"),
            seed: 13,
            strict: false,
            filter: CorpusFilter::default(),
            window: WindowConfig::default(),
            backend: BackendKind::Mock,
            generation: GenerationConfig::default(),
            postprocess: PostprocessConfig::default(),
            aggregate: AggregateConfig::default(),
            timeseries: None,
            matching: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config, or TOML when the file ends in `.toml`.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| PipelineError::ConfigParse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn with_endpoint_override(mut self, endpoint: Option<String>) -> Self {
        if let Some(e) = endpoint.filter(|e| !e.trim().is_empty()) {
            self.generation.endpoint = Some(e);
        }
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::Invalid(m));
        if let Err(e) = self.window.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.generation.validate() {
            return invalid(e.to_string());
        }
        let needs_endpoint = self.backend == BackendKind::Remote
            || self.matching.as_ref().is_some_and(|m| m.embedder == EmbedderKind::Remote);
        if needs_endpoint && self.generation.endpoint.is_none() {
            return invalid(format!("a remote backend needs generation.endpoint or {ENDPOINT_ENV}"));
        }
        if self.matching.as_ref().is_some_and(|m| m.candidates == 0) {
            return invalid("match.candidates must be at least 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; resume requires an exact match.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Artifact file names inside the output directory.
pub mod artifacts {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const SPANS: &str = "spans.jsonl";
    pub const QUESTIONS: &str = "questions.jsonl";
    pub const CLEAN: &str = "clean.jsonl";
    pub const FREQ: &str = "freq.csv";
    pub const SERIES: &str = "series.csv";
    pub const SHEET_PER_DOC: &str = "sheet_per_doc.csv";
    pub const SHEET_FREQUENT: &str = "sheet_frequent.csv";
    pub const EXCLUDED: &str = "excluded.jsonl";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    /// Skipped because a previous run with the same config completed it.
    Resumed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(default)]
    pub counts: BTreeMap<String, u64>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Headline counts of a run, taken from the latest event of each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub documents: u64,
    pub spans: u64,
    pub generations: u64,
    pub post_filter_questions: u64,
    pub unique_questions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: PipelineConfig,
    /// Append-only log of stage outcomes, across resumed runs.
    pub events: Vec<StageEvent>,
}

impl RunManifest {
    pub fn new(config: &PipelineConfig) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            config: config.clone(),
            events: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let err = |message: String| PipelineError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, self).map_err(std::io::Error::other)?;
            w.write_all(b"\n")
        })
        .map_err(|e| PipelineError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn last_event(&self, stage: Stage) -> Option<&StageEvent> {
        self.events.iter().rev().find(|e| e.stage == stage)
    }

    fn count(&self, stage: Stage, key: &str) -> u64 {
        self.last_event(stage)
            .and_then(|e| e.counts.get(key).copied())
            .unwrap_or(0)
    }

    pub fn counts(&self) -> RunCounts {
        RunCounts {
            documents: self.count(Stage::Ingest, "documents_kept"),
            spans: self.count(Stage::Spans, "spans"),
            generations: self.count(Stage::Generate, "generations"),
            post_filter_questions: self.count(Stage::Postprocess, "post_filter_questions"),
            unique_questions: self.count(Stage::Postprocess, "unique_questions"),
        }
    }

    /// The failed event that ended the run, if it failed.
    pub fn failure(&self) -> Option<&StageEvent> {
        self.events
            .last()
            .filter(|e| e.status == StageStatus::Failed)
    }
}

/// Writes through a temporary sibling and renames, so an interrupted write
/// never leaves a truncated artifact under the final name.
fn write_atomic<F>(path: &Path, body: F) -> std::io::Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut w = BufWriter::new(File::create(&tmp)?);
    body(&mut w)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop after this stage completes (used to leave a checkpoint behind).
    pub stop_after: Option<Stage>,
    /// Ignore any previous manifest and rerun every stage.
    pub fresh: bool,
}

struct StageResult {
    counts: BTreeMap<String, u64>,
    outputs: Vec<&'static str>,
}

impl StageResult {
    fn new(outputs: &[&'static str]) -> Self {
        Self {
            counts: BTreeMap::new(),
            outputs: outputs.to_vec(),
        }
    }

    fn count(mut self, key: &str, n: usize) -> Self {
        self.counts.insert(key.to_string(), n as u64);
        self
    }
}

type StageOutcome = Result<StageResult, String>;

/// Runs the pipeline and returns the final manifest, which is also written
/// to `<output_dir>/manifest.json`.
pub fn run_pipeline(config: &PipelineConfig, opts: RunOptions) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let manifest_path = config.path(MANIFEST_FILE);
    let mut run = Run {
        config,
        previous: None,
        manifest: RunManifest::new(config),
        manifest_path,
        resuming: !opts.fresh,
        data: StageData::default(),
    };

    if !config.input.is_file() {
        fs::create_dir_all(&config.output_dir).map_err(|e| PipelineError::Manifest {
            path: config.output_dir.clone(),
            message: e.to_string(),
        })?;
        let err = PipelineError::MissingInput(config.input.clone());
        run.record(Stage::Ingest, Err(err.to_string()))?;
        return Err(err);
    }
    fs::create_dir_all(&config.output_dir).map_err(|e| PipelineError::Manifest {
        path: config.output_dir.clone(),
        message: e.to_string(),
    })?;

    if !opts.fresh && run.manifest_path.is_file() {
        match RunManifest::load(&run.manifest_path) {
            Ok(prev) if prev.config_hash == run.manifest.config_hash => {
                run.manifest.events = prev.events.clone();
                run.previous = Some(prev);
            }
            Ok(_) => tracing::info!("config changed since last run; starting fresh"),
            Err(e) => tracing::warn!("ignoring unreadable manifest: {e}"),
        }
    }

    for stage in Stage::ALL {
        let enabled = match stage {
            Stage::Timeseries => config.timeseries.is_some(),
            Stage::Match => config.matching.is_some(),
            _ => true,
        };
        if enabled {
            run.stage(stage)?;
        }
        if opts.stop_after == Some(stage) {
            break;
        }
    }
    Ok(run.manifest)
}

#[derive(Default)]
struct StageData {
    documents: Option<Vec<Document>>,
    spans: Option<Vec<SentenceSpan>>,
    generations: Option<Vec<QuestionRecord>>,
    clean: Option<Vec<QuestionRecord>>,
    table: Option<Vec<FrequencyEntry>>,
}

struct Run<'c> {
    config: &'c PipelineConfig,
    previous: Option<RunManifest>,
    manifest: RunManifest,
    manifest_path: PathBuf,
    resuming: bool,
    data: StageData,
}

impl Run<'_> {
    fn record(&mut self, stage: Stage, outcome: StageOutcome) -> Result<(), PipelineError> {
        let event = match &outcome {
            Ok(r) => StageEvent {
                stage,
                status: StageStatus::Completed,
                counts: r.counts.clone(),
                outputs: r.outputs.iter().map(|s| s.to_string()).collect(),
                error: None,
            },
            Err(message) => StageEvent {
                stage,
                status: StageStatus::Failed,
                counts: BTreeMap::new(),
                outputs: Vec::new(),
                error: Some(message.clone()),
            },
        };
        self.manifest.events.push(event);
        self.manifest.save(&self.manifest_path)
    }

    /// The previous run's completed event for `stage`, if every artifact it
    /// lists is still on disk.
    fn checkpoint(&self, stage: Stage) -> Option<StageEvent> {
        if !self.resuming {
            return None;
        }
        let prev = self.previous.as_ref()?.last_event(stage)?;
        let usable = prev.status != StageStatus::Failed
            && prev.outputs.iter().all(|o| self.config.path(o).is_file());
        usable.then(|| prev.clone())
    }

    fn stage(&mut self, stage: Stage) -> Result<(), PipelineError> {
        if let Some(prev) = self.checkpoint(stage) {
            tracing::info!(%stage, "resuming from checkpoint");
            self.manifest.events.push(StageEvent {
                status: StageStatus::Resumed,
                ..prev
            });
            return self.manifest.save(&self.manifest_path);
        }
        // A rerun stage invalidates every later checkpoint.
        self.resuming = false;
        tracing::info!(%stage, "running");
        let outcome = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Spans => self.spans(),
            Stage::Generate => self.generate(),
            Stage::Postprocess => self.postprocess(),
            Stage::Aggregate => self.aggregate(),
            Stage::Timeseries => self.timeseries(),
            Stage::Match => self.matching(),
        };
        let failed = outcome.as_ref().err().cloned();
        self.record(stage, outcome)?;
        match failed {
            Some(message) => Err(PipelineError::Stage { stage, message }),
            None => Ok(()),
        }
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, items: &[T]) -> Result<(), String> {
        write_atomic(&self.config.path(name), |w| {
            jsonl::write_to(w, items).map(|_| ()).map_err(std::io::Error::other)
        })
        .map_err(|e| format!("{name}: {e}"))
    }

    fn read_jsonl<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, String> {
        jsonl::read(&self.config.path(name)).map_err(|e| e.to_string())
    }

    fn documents(&mut self) -> Result<&[Document], String> {
        if self.data.documents.is_none() {
            self.data.documents = Some(self.read_jsonl(artifacts::CORPUS)?);
        }
        Ok(self.data.documents.as_deref().unwrap_or_default())
    }

    fn spans_data(&mut self) -> Result<&[SentenceSpan], String> {
        if self.data.spans.is_none() {
            self.data.spans = Some(self.read_jsonl(artifacts::SPANS)?);
        }
        Ok(self.data.spans.as_deref().unwrap_or_default())
    }

    fn generations(&mut self) -> Result<&[QuestionRecord], String> {
        if self.data.generations.is_none() {
            self.data.generations = Some(self.read_jsonl(artifacts::QUESTIONS)?);
        }
        Ok(self.data.generations.as_deref().unwrap_or_default())
    }

    fn clean(&mut self) -> Result<&[QuestionRecord], String> {
        if self.data.clean.is_none() {
            self.data.clean = Some(self.read_jsonl(artifacts::CLEAN)?);
        }
        Ok(self.data.clean.as_deref().unwrap_or_default())
    }

    fn table(&mut self) -> Result<&[FrequencyEntry], String> {
        if self.data.table.is_none() {
            let file = File::open(self.config.path(artifacts::FREQ)).map_err(|e| e.to_string())?;
            self.data.table = Some(read_frequency_csv(file).map_err(|e| e.to_string())?);
        }
        Ok(self.data.table.as_deref().unwrap_or_default())
    }

    fn ingest(&mut self) -> StageOutcome {
        let strictness = if self.config.strict {
            Strictness::Strict
        } else {
            Strictness::Lenient
        };
        let loaded = load_corpus(&self.config.input, CorpusFormat::JsonLines, strictness)
            .map_err(|e| e.to_string())?;
        let read = loaded.documents.len();
        let kept: Vec<Document> = filter_corpus(loaded.documents, &self.config.filter).collect();
        self.write_jsonl(artifacts::CORPUS, &kept)?;
        let result = StageResult::new(&[artifacts::CORPUS])
            .count("documents_read", read)
            .count("records_rejected", loaded.rejected.len())
            .count("documents_kept", kept.len());
        self.data.documents = Some(kept);
        Ok(result)
    }

    fn spans(&mut self) -> StageOutcome {
        let cfg = self.config.window;
        let splitter = RuleSplitter::default();
        let spans: Vec<SentenceSpan> = self
            .documents()?
            .iter()
            .flat_map(|d| document_spans(d, &cfg, &splitter))
            .collect();
        self.write_jsonl(artifacts::SPANS, &spans)?;
        let result = StageResult::new(&[artifacts::SPANS]).count("spans", spans.len());
        self.data.spans = Some(spans);
        Ok(result)
    }

    fn generate(&mut self) -> StageOutcome {
        let dates: HashMap<String, chrono::NaiveDate> = self
            .documents()?
            .iter()
            .filter_map(|d| d.publish_date.map(|date| (d.doc_id.clone(), date)))
            .collect();
        let gen_cfg = self.config.generation.clone();
        let backend: Box<dyn QuestionBackend> = match self.config.backend {
            BackendKind::Mock => Box::new(MockBackend::default()),
            BackendKind::Remote => Box::new(RemoteBackend::new(
                gen_cfg.endpoint.as_deref().unwrap_or_default(),
                Duration::from_secs(gen_cfg.request_timeout_secs),
            )),
        };
        let spans = self.spans_data()?;
        let out = generate(spans, &dates, &gen_cfg, backend.as_ref()).map_err(|e| e.to_string())?;
        self.write_jsonl(artifacts::QUESTIONS, &out.records)?;
        let s = &out.summary;
        let result = StageResult::new(&[artifacts::QUESTIONS])
            .count("spans", s.spans)
            .count("generations", out.records.len())
            .count("backend_calls", s.calls)
            .count("retries", s.retries)
            .count("short_spans", s.short_spans)
            .count("failed_spans", s.failures.len());
        self.data.generations = Some(out.records);
        Ok(result)
    }

    fn postprocess(&mut self) -> StageOutcome {
        let pp = self.config.postprocess.clone();
        let records = self.generations()?.to_vec();
        let generations = records.len();
        let mut outcome = filter_questions(records, &pp.filter);
        for r in &mut outcome.kept {
            r.question = normalize_with(&r.question, pp.normalization);
        }
        self.write_jsonl(artifacts::CLEAN, &outcome.kept)?;
        let unique = unique_questions(&outcome.kept).len();
        let result = StageResult::new(&[artifacts::CLEAN])
            .count("generations", generations)
            .count("dropped", outcome.dropped)
            .count("post_filter_questions", outcome.kept.len())
            .count("unique_questions", unique);
        self.data.clean = Some(outcome.kept);
        Ok(result)
    }

    fn aggregate(&mut self) -> StageOutcome {
        let agg = self.config.aggregate.clone();
        let entries = count_frequencies(self.clean()?);
        let distinct = entries.len();
        let mut table = filter_by_doc_frequency(entries, agg.min_docs);
        let above_min = table.len();
        table.truncate(agg.top);
        write_atomic(&self.config.path(artifacts::FREQ), |w| {
            write_frequency_csv(w, &table).map_err(std::io::Error::other)
        })
        .map_err(|e| format!("{}: {e}", artifacts::FREQ))?;
        let result = StageResult::new(&[artifacts::FREQ])
            .count("distinct_questions", distinct)
            .count("above_min_docs", above_min)
            .count("rows", table.len());
        self.data.table = Some(table);
        Ok(result)
    }

    fn timeseries(&mut self) -> StageOutcome {
        let Some(ts) = self.config.timeseries.clone() else {
            return Ok(StageResult::new(&[]));
        };
        let report = keyword_group_series(self.clean()?, &ts.groups, ts.bucket, ts.phrase_match);
        write_atomic(&self.config.path(artifacts::SERIES), |w| {
            write_series_csv(w, &report).map_err(std::io::Error::other)
        })
        .map_err(|e| format!("{}: {e}", artifacts::SERIES))?;
        let undated: u64 = report.undated.values().sum();
        Ok(StageResult::new(&[artifacts::SERIES])
            .count("groups", report.series.len())
            .count(
                "months",
                report.series.first().map_or(0, |s| s.buckets.len()),
            )
            .count("undated_matches", undated as usize))
    }

    fn matching(&mut self) -> StageOutcome {
        let Some(mc) = self.config.matching.clone() else {
            return Ok(StageResult::new(&[]));
        };
        let gold: Vec<GoldPair> = jsonl::read(&mc.gold).map_err(|e| e.to_string())?;
        let embedder: Box<dyn Embedder> = match mc.embedder {
            EmbedderKind::Stub => Box::new(StubEmbedder::new(self.config.seed)),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(
                self.config.generation.endpoint.as_deref().unwrap_or_default(),
                Duration::from_secs(self.config.generation.request_timeout_secs),
            )),
        };

        let known: HashSet<String> = self.documents()?.iter().map(|d| d.doc_id.clone()).collect();
        let mut by_doc: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in self.clean()? {
            by_doc.entry(r.doc_id.clone()).or_default().push(r.question.clone());
        }
        let per_doc = per_document_experiment(&gold, &by_doc, Some(&known), embedder.as_ref(), mc.candidates);
        let per_doc = match per_doc {
            Ok(o) => o,
            Err(e) => {
                self.write_sheet(artifacts::SHEET_PER_DOC, &e.completed)?;
                return Err(e.to_string());
            }
        };
        self.write_sheet(artifacts::SHEET_PER_DOC, &per_doc.sheet)?;
        self.write_jsonl(artifacts::EXCLUDED, &per_doc.excluded)?;

        let references: Vec<String> = gold
            .iter()
            .map(|g| g.question.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let table = self.table()?.to_vec();
        let mut outputs = vec![artifacts::SHEET_PER_DOC, artifacts::EXCLUDED];
        let mut frequent_rows = 0;
        if !table.is_empty() {
            match frequent_question_experiment(&references, &table, embedder.as_ref(), mc.candidates) {
                Ok(sheet) => {
                    frequent_rows = sheet.rows.len();
                    self.write_sheet(artifacts::SHEET_FREQUENT, &sheet)?;
                    outputs.push(artifacts::SHEET_FREQUENT);
                }
                Err(e) => {
                    self.write_sheet(artifacts::SHEET_FREQUENT, &e.completed)?;
                    return Err(e.to_string());
                }
            }
        } else {
            tracing::warn!("frequency table is empty; skipping frequent-question sheet");
        }
        Ok(StageResult::new(&outputs)
            .count("gold_pairs", gold.len())
            .count("per_doc_rows", per_doc.sheet.rows.len())
            .count("excluded", per_doc.excluded.len())
            .count("frequent_rows", frequent_rows))
    }

    fn write_sheet(&self, name: &str, sheet: &AnnotationSheet) -> Result<(), String> {
        write_atomic(&self.config.path(name), |w| {
            sheet.write_csv(w).map_err(std::io::Error::other)
        })
        .map_err(|e| format!("{name}: {e}"))
    }
}

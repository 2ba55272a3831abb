//! Corpus exploration through generated questions.
//!
//! The pipeline windows documents into overlapping sentence spans, asks a
//! generation backend for one question per span, filters and normalizes the
//! questions, and aggregates them by frequency and publication month. The
//! evaluation side ranks generated questions against human references with
//! greedy token matching over embeddings and produces annotation sheets. LDA
//! and n-gram counting are provided as baselines.
//!
//! Module map:
//!
//! - [`corpus`]: JSON-lines corpus loading and date/keyword filtering
//! - [`preprocess`]: artifact cleaning, sentence splitting, span windowing
//! - [`generation`]: generation backends (remote HTTP, deterministic mock)
//! - [`postprocess`]: boilerplate filtering and question normalization
//! - [`aggregate`]: frequency tables and keyword-group time series
//! - [`matching`]: greedy-matching scores, ranking, annotation sheets
//! - [`topics`]: n-gram vocabularies, collapsed Gibbs LDA, word-cloud data
//! - [`pipeline`]: end-to-end runs with checkpointing and a run manifest

pub mod aggregate;
pub mod corpus;
pub mod generation;
pub mod jsonl;
pub mod matching;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod text;
pub mod topics;

pub use aggregate::{FrequencyEntry, TimeBucketSeries};
pub use corpus::{CorpusFilter, Document, MatchMode};
pub use generation::{GenerationConfig, QuestionBackend, QuestionRecord};
pub use matching::{AnnotationSheet, Embedder, MatchCandidate, TokenEmbeddingSeq};
pub use pipeline::{PipelineConfig, RunManifest};
pub use postprocess::FilterConfig;
pub use preprocess::{SentenceSpan, WindowConfig};
pub use text::Stopwords;
pub use topics::{TopicModel, Vocab};

/// Version string recorded in run manifests.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use qmine_core::aggregate::{
    count_frequencies, filter_by_doc_frequency, keyword_group_series, read_frequency_csv,
    write_frequency_csv, write_series_csv, PhraseMatch, TimeBucket,
};
use qmine_core::corpus::{filter_corpus, load_corpus, CorpusFormat, KeywordFilter, Strictness};
use qmine_core::generation::{generate, MockBackend, QuestionBackend, RemoteBackend};
use qmine_core::jsonl;
use qmine_core::matching::{
    frequent_question_experiment, per_document_experiment, summarize_annotations, AnnotationSheet,
    Embedder, GoldPair, RemoteEmbedder, StubEmbedder, SHEET_CANDIDATES,
};
use qmine_core::pipeline::{run_pipeline, RunOptions, Stage, StageStatus, ENDPOINT_ENV, MANIFEST_FILE};
use qmine_core::postprocess::{filter_questions, normalize_with, parse_term_list, Normalization};
use qmine_core::preprocess::{document_spans, RuleSplitter};
use qmine_core::topics::{
    build_vocab, distinct_in_order, fit_lda, ngram_frequencies, representative_questions, top_terms,
    LdaConfig,
};
use qmine_core::{
    CorpusFilter, Document, FilterConfig, GenerationConfig, MatchMode, PipelineConfig, QuestionRecord,
    RunManifest, SentenceSpan, Stopwords, TopicModel, WindowConfig,
};

#[derive(Parser)]
#[command(name = "qmine", version, about = "Summarize a corpus by the questions it answers")]
struct Cli {
    /// Seed for every stochastic component (LDA, stub embedder, pipeline).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Increase log verbosity (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a JSON-lines corpus and apply the date/keyword filter.
    Ingest(IngestArgs),
    /// Clean, split and window documents into sentence spans.
    Spans(SpansArgs),
    /// Generate questions for every span.
    Generate(GenerateArgs),
    /// Drop boilerplate questions and normalize the rest.
    Postprocess(PostprocessArgs),
    /// Build the question frequency table.
    Aggregate(AggregateArgs),
    /// Count keyword groups per publication month.
    Timeseries(TimeseriesArgs),
    /// Build or summarize annotation sheets.
    #[command(subcommand)]
    Match(MatchCommand),
    /// LDA and n-gram baselines.
    #[command(subcommand)]
    Topics(TopicsCommand),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
    /// Inspect run manifests.
    #[command(subcommand)]
    Manifest(ManifestCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchArg {
    Any,
    All,
}

impl From<MatchArg> for MatchMode {
    fn from(m: MatchArg) -> Self {
        match m {
            MatchArg::Any => MatchMode::AnyOf,
            MatchArg::All => MatchMode::AllOf,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Keep documents published strictly after this date (YYYY-MM-DD).
    #[arg(long)]
    min_date: Option<NaiveDate>,
    /// Comma-separated case-insensitive search terms.
    #[arg(long, value_delimiter = ',')]
    terms: Vec<String>,
    #[arg(long = "match", value_enum, default_value = "any")]
    match_mode: MatchArg,
    /// Abort on the first malformed record instead of skipping it.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SpansArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    stride: usize,
    /// Passages with fewer sentences are dropped.
    #[arg(long, default_value_t = 2)]
    min_sentences: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Remote,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    spans: PathBuf,
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendArg,
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 4)]
    beams: usize,
    #[arg(long, default_value_t = 64)]
    max_tokens: usize,
    #[arg(long, default_value_t = 1)]
    questions_per_span: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    max_inflight: usize,
    #[arg(long, default_value_t = 2)]
    retries: usize,
    #[arg(long, default_value_t = 300)]
    timeout_secs: u64,
    /// Corpus file used to attach publication dates to the records.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizeArg {
    Literal,
    Aggressive,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    input: PathBuf,
    /// Publisher-name list, one per line; defaults to the shipped list.
    #[arg(long)]
    banned_terms: Option<PathBuf>,
    /// Comma-separated substrings that disqualify a question.
    #[arg(long, value_delimiter = ',', default_value = "preprint,copyright")]
    banned_substrings: Vec<String>,
    #[arg(long, value_enum, default_value = "literal")]
    normalize: NormalizeArg,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1000)]
    top: usize,
    #[arg(long, default_value_t = 3)]
    min_docs: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhraseArg {
    Literal,
    Stem,
}

#[derive(Args)]
struct TimeseriesArgs {
    /// Cleaned question records.
    #[arg(long)]
    input: PathBuf,
    /// JSON object mapping group label to a list of phrases.
    #[arg(long)]
    groups: PathBuf,
    #[arg(long, default_value = "month")]
    bucket: TimeBucket,
    #[arg(long, value_enum, default_value = "literal")]
    phrase_match: PhraseArg,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderArg {
    Stub,
    Remote,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long, value_enum, default_value = "stub")]
    embedder: EmbedderArg,
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 300)]
    timeout_secs: u64,
    /// Candidates per sheet row.
    #[arg(long, default_value_t = SHEET_CANDIDATES)]
    k: usize,
}

#[derive(Subcommand)]
enum MatchCommand {
    /// Rank each gold question against its own document's questions.
    PerDoc {
        /// JSON lines of {"question", "doc_id"}.
        #[arg(long)]
        gold: PathBuf,
        /// Cleaned question records.
        #[arg(long)]
        questions: PathBuf,
        /// Corpus file; lets the sheet tell unknown documents from silent ones.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
        #[arg(long)]
        out: PathBuf,
        /// Where to write gold rows that could not be scored.
        #[arg(long)]
        excluded: Option<PathBuf>,
    },
    /// Rank each gold question against the frequency table.
    Frequent {
        #[arg(long)]
        gold: PathBuf,
        /// Frequency table CSV.
        #[arg(long)]
        questions: PathBuf,
        #[command(flatten)]
        embed: EmbedArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report match rates of a labelled sheet.
    Summarize {
        #[arg(long)]
        sheet: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum TopicsCommand {
    /// Fit LDA over a JSON-lines file of texts, questions or documents.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Highest n-gram order in the vocabulary.
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
        ngrams: u8,
        #[arg(long, default_value_t = 2)]
        min_count: u64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        /// Defaults to 50 / k.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        beta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the top terms of every topic.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_terms: usize,
        /// Comma-separated topic ids to leave out.
        #[arg(long, value_delimiter = ',')]
        drop_topics: Vec<usize>,
    },
    /// Pick the representative question of every topic.
    Questions {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        freq: PathBuf,
        #[arg(long, value_delimiter = ',')]
        drop_topics: Vec<usize>,
    },
    /// Weighted n-gram counts for word clouds.
    Ngrams {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
        ngrams: u8,
        #[arg(long, default_value_t = 100)]
        top: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON or TOML pipeline config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    /// Stop after this stage, leaving a checkpoint for the next run.
    #[arg(long)]
    stop_after: Option<Stage>,
    /// Ignore checkpoints from a previous run.
    #[arg(long)]
    fresh: bool,
}

#[derive(Subcommand)]
enum ManifestCommand {
    /// Print the stage log and headline counts of a run.
    Show {
        /// Manifest file or run directory.
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();

    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Spans(a) => spans(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Postprocess(a) => postprocess(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Timeseries(a) => timeseries(a),
        Command::Match(m) => match_cmd(m, seed.unwrap_or(13)),
        Command::Topics(t) => topics_cmd(t, seed.unwrap_or(13)),
        Command::Run(a) => run(a, seed),
        Command::Manifest(ManifestCommand::Show { path, json }) => manifest_show(&path, json),
    }
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<usize> {
    jsonl::write(path, items).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_documents(path: &Path, strictness: Strictness) -> Result<Vec<Document>> {
    let loaded = load_corpus(path, CorpusFormat::JsonLines, strictness)
        .with_context(|| format!("loading corpus {}", path.display()))?;
    if !loaded.rejected.is_empty() {
        eprintln!("skipped {} malformed record(s)", loaded.rejected.len());
    }
    Ok(loaded.documents)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let strictness = if a.strict { Strictness::Strict } else { Strictness::Lenient };
    let docs = load_documents(&a.input, strictness)?;
    let keywords = if a.terms.is_empty() {
        None
    } else {
        Some(KeywordFilter::new(&a.terms, a.match_mode.into())?)
    };
    let filter = CorpusFilter {
        min_date: a.min_date,
        keywords,
    };
    let read = docs.len();
    let kept: Vec<Document> = filter_corpus(docs, &filter).collect();
    write_jsonl(&a.output, &kept)?;
    eprintln!("kept {} of {} documents", kept.len(), read);
    Ok(())
}

fn spans(a: SpansArgs) -> Result<()> {
    let cfg = WindowConfig {
        window_size: a.window,
        stride: a.stride,
        min_sentences_per_passage: a.min_sentences,
    };
    cfg.validate()?;
    let docs = load_documents(&a.input, Strictness::Lenient)?;
    let splitter = RuleSplitter::default();
    let spans: Vec<SentenceSpan> = docs
        .iter()
        .flat_map(|d| document_spans(d, &cfg, &splitter))
        .collect();
    write_jsonl(&a.output, &spans)?;
    eprintln!("{} spans from {} documents", spans.len(), docs.len());
    Ok(())
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    let cfg = GenerationConfig {
        beams: a.beams,
        max_question_tokens: a.max_tokens,
        questions_per_span: a.questions_per_span,
        endpoint: a.endpoint.clone(),
        batch_size: a.batch_size,
        max_inflight_requests: a.max_inflight,
        max_retries: a.retries,
        request_timeout_secs: a.timeout_secs,
    };
    let backend: Box<dyn QuestionBackend> = match a.backend {
        BackendArg::Mock => Box::new(MockBackend::default()),
        BackendArg::Remote => {
            let Some(endpoint) = &a.endpoint else {
                bail!("--backend remote needs --endpoint or {ENDPOINT_ENV}");
            };
            Box::new(RemoteBackend::new(endpoint, Duration::from_secs(a.timeout_secs)))
        }
    };
    let spans: Vec<SentenceSpan> =
        jsonl::read(&a.spans).with_context(|| format!("reading spans {}", a.spans.display()))?;
    let dates: HashMap<String, NaiveDate> = match &a.corpus {
        Some(path) => load_documents(path, Strictness::Lenient)?
            .into_iter()
            .filter_map(|d| d.publish_date.map(|date| (d.doc_id, date)))
            .collect(),
        None => HashMap::new(),
    };
    let out = generate(&spans, &dates, &cfg, backend.as_ref())?;
    write_jsonl(&a.output, &out.records)?;
    let s = &out.summary;
    eprintln!(
        "{} questions from {} spans ({} calls, {} retries, {} failed spans)",
        out.records.len(),
        s.spans,
        s.calls,
        s.retries,
        s.failures.len()
    );
    Ok(())
}

fn postprocess(a: PostprocessArgs) -> Result<()> {
    let publishers = match &a.banned_terms {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_term_list(&text)
        }
        None => FilterConfig::default().banned_publisher_names,
    };
    let cfg = FilterConfig::new(a.banned_substrings, publishers)?;
    let mode = match a.normalize {
        NormalizeArg::Literal => Normalization::Literal,
        NormalizeArg::Aggressive => Normalization::Aggressive,
    };
    let records: Vec<QuestionRecord> = jsonl::read(&a.input)?;
    let total = records.len();
    let mut outcome = filter_questions(records, &cfg);
    for r in &mut outcome.kept {
        r.question = normalize_with(&r.question, mode);
    }
    write_jsonl(&a.output, &outcome.kept)?;
    eprintln!("kept {} of {} questions", outcome.kept.len(), total);
    Ok(())
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    let records: Vec<QuestionRecord> = jsonl::read(&a.input)?;
    let mut table = filter_by_doc_frequency(count_frequencies(&records), a.min_docs);
    table.truncate(a.top);
    let mut w = create(&a.output)?;
    write_frequency_csv(&mut w, &table)?;
    w.flush()?;
    eprintln!("{} rows", table.len());
    Ok(())
}

fn timeseries(a: TimeseriesArgs) -> Result<()> {
    let records: Vec<QuestionRecord> = jsonl::read(&a.input)?;
    let groups: BTreeMap<String, Vec<String>> = serde_json::from_reader(
        File::open(&a.groups).with_context(|| format!("opening {}", a.groups.display()))?,
    )
    .with_context(|| format!("parsing groups {}", a.groups.display()))?;
    let mode = match a.phrase_match {
        PhraseArg::Literal => PhraseMatch::Literal,
        PhraseArg::Stem => PhraseMatch::Stem,
    };
    let report = keyword_group_series(&records, &groups, a.bucket, mode);
    let mut w = create(&a.output)?;
    write_series_csv(&mut w, &report)?;
    w.flush()?;
    Ok(())
}

fn embedder(e: &EmbedArgs, seed: u64) -> Result<Box<dyn Embedder>> {
    Ok(match e.embedder {
        EmbedderArg::Stub => Box::new(StubEmbedder::new(seed)),
        EmbedderArg::Remote => {
            let Some(endpoint) = &e.endpoint else {
                bail!("--embedder remote needs --endpoint or {ENDPOINT_ENV}");
            };
            Box::new(RemoteEmbedder::new(endpoint, Duration::from_secs(e.timeout_secs)))
        }
    })
}

fn write_sheet(path: &Path, sheet: &AnnotationSheet) -> Result<()> {
    let mut w = create(path)?;
    sheet.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn match_cmd(m: MatchCommand, seed: u64) -> Result<()> {
    match m {
        MatchCommand::PerDoc {
            gold,
            questions,
            corpus,
            embed,
            out,
            excluded,
        } => {
            let gold: Vec<GoldPair> = jsonl::read(&gold)?;
            let records: Vec<QuestionRecord> = jsonl::read(&questions)?;
            let mut by_doc: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for r in records {
                by_doc.entry(r.doc_id).or_default().push(r.question);
            }
            let known = match &corpus {
                Some(p) => Some(
                    load_documents(p, Strictness::Lenient)?
                        .into_iter()
                        .map(|d| d.doc_id)
                        .collect(),
                ),
                None => None,
            };
            let emb = embedder(&embed, seed)?;
            let outcome = match per_document_experiment(&gold, &by_doc, known.as_ref(), emb.as_ref(), embed.k) {
                Ok(o) => o,
                Err(e) => {
                    write_sheet(&out, &e.completed)?;
                    bail!("{e} (partial sheet written to {})", out.display());
                }
            };
            write_sheet(&out, &outcome.sheet)?;
            if let Some(path) = excluded {
                write_jsonl(&path, &outcome.excluded)?;
            }
            eprintln!(
                "{} rows, {} gold pairs excluded",
                outcome.sheet.rows.len(),
                outcome.excluded.len()
            );
            Ok(())
        }
        MatchCommand::Frequent {
            gold,
            questions,
            embed,
            out,
        } => {
            let gold: Vec<GoldPair> = jsonl::read(&gold)?;
            let references = distinct_in_order(gold.into_iter().map(|g| g.question));
            let table = read_frequency_csv(
                File::open(&questions).with_context(|| format!("opening {}", questions.display()))?,
            )?;
            let emb = embedder(&embed, seed)?;
            match frequent_question_experiment(&references, &table, emb.as_ref(), embed.k) {
                Ok(sheet) => write_sheet(&out, &sheet),
                Err(e) => {
                    write_sheet(&out, &e.completed)?;
                    bail!("{e} (partial sheet written to {})", out.display());
                }
            }
        }
        MatchCommand::Summarize { sheet, json } => {
            let file = File::open(&sheet).with_context(|| format!("opening {}", sheet.display()))?;
            let parsed = AnnotationSheet::read_csv(std::io::BufReader::new(file))?;
            let summary = summarize_annotations(&parsed)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                println!("{summary}");
            }
            Ok(())
        }
    }
}

/// Reads texts for topic modelling. Each line may carry `text`, `question`
/// (identical questions become one labelled document) or a corpus document.
fn topic_texts(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let reader = jsonl::open(path)?;
    let mut texts = Vec::new();
    let mut questions = Vec::new();
    for (i, line) in std::io::BufRead::lines(reader).enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if let Some(t) = v.get("text").and_then(|t| t.as_str()) {
            texts.push(t.to_string());
        } else if let Some(q) = v.get("question").and_then(|q| q.as_str()) {
            questions.push(q.to_string());
        } else if v.get("doc_id").is_some() {
            let doc: Document = serde_json::from_value(v).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            let mut parts = vec![doc.title];
            parts.extend(doc.passages);
            texts.push(parts.join("\n"));
        } else {
            bail!("{}:{}: expected a text, question or document record", path.display(), i + 1);
        }
    }
    if !texts.is_empty() && !questions.is_empty() {
        bail!("{}: mixes question records with other texts", path.display());
    }
    if questions.is_empty() {
        Ok((texts, Vec::new()))
    } else {
        let distinct = distinct_in_order(questions);
        Ok((distinct.clone(), distinct))
    }
}

fn load_model(path: &Path) -> Result<TopicModel> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("parsing model {}", path.display()))
}

fn topics_cmd(t: TopicsCommand, seed: u64) -> Result<()> {
    let stopwords = Stopwords::english();
    match t {
        TopicsCommand::Fit {
            input,
            k,
            ngrams,
            min_count,
            iters,
            alpha,
            beta,
            out,
        } => {
            let (texts, labels) = topic_texts(&input)?;
            let vocab = build_vocab(&texts, ngrams as usize, min_count, &stopwords)?;
            let docs: Vec<Vec<u32>> = texts.iter().map(|t| vocab.encode(t, &stopwords)).collect();
            let cfg = LdaConfig {
                num_topics: k,
                alpha,
                beta,
                iterations: iters,
                seed,
            };
            let (mut model, report) = fit_lda(&docs, &vocab, &cfg)?;
            model.doc_labels = labels;
            let mut w = create(&out)?;
            serde_json::to_writer(&mut w, &model)?;
            w.flush()?;
            eprintln!(
                "{} documents, {} terms, {} tokens, {} empty documents",
                docs.len(),
                vocab.len(),
                report.tokens,
                report.skipped_docs.len()
            );
            Ok(())
        }
        TopicsCommand::Report {
            model,
            top_terms: n,
            drop_topics,
        } => {
            let model = load_model(&model)?;
            for topic in (0..model.num_topics).filter(|t| !drop_topics.contains(t)) {
                let terms: Vec<String> = top_terms(&model, n, topic)?
                    .into_iter()
                    .map(|(term, p)| format!("{term}:{p:.4}"))
                    .collect();
                println!("{topic}\t{}", terms.join(" "));
            }
            Ok(())
        }
        TopicsCommand::Questions {
            model,
            freq,
            drop_topics,
        } => {
            let model = load_model(&model)?;
            let table = read_frequency_csv(File::open(&freq).with_context(|| format!("opening {}", freq.display()))?)?;
            for (topic, rep) in representative_questions(&model, &table)?.into_iter().enumerate() {
                if drop_topics.contains(&topic) {
                    continue;
                }
                match rep {
                    Some(r) => println!("{topic}\t{}\t{:.6}", r.question, r.score),
                    None => println!("{topic}\t-\t0"),
                }
            }
            Ok(())
        }
        TopicsCommand::Ngrams {
            input,
            ngrams,
            top,
            output,
        } => {
            let (texts, _) = topic_texts(&input)?;
            let counts = ngram_frequencies(&texts, ngrams as usize, &stopwords, top);
            let mut w: Box<dyn Write> = match &output {
                Some(p) => Box::new(create(p)?),
                None => Box::new(std::io::stdout().lock()),
            };
            writeln!(w, "ngram,count")?;
            for (g, c) in counts {
                writeln!(w, "{g},{c}")?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn run(a: RunArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?.with_endpoint_override(a.endpoint);
    if let Some(input) = a.input {
        cfg.input = input;
    }
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let opts = RunOptions {
        stop_after: a.stop_after,
        fresh: a.fresh,
    };
    let manifest = run_pipeline(&cfg, opts)?;
    let c = manifest.counts();
    eprintln!(
        "spans {}  generations {}  post-filter {}  unique {}",
        c.spans, c.generations, c.post_filter_questions, c.unique_questions
    );
    Ok(())
}

fn manifest_show(path: &Path, json: bool) -> Result<()> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let manifest = RunManifest::load(&file)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&manifest)?);
        return Ok(());
    }
    println!("tool version  {}", manifest.tool_version);
    println!("seed          {}", manifest.seed);
    println!("config hash   {}", manifest.config_hash);
    println!("input         {}", manifest.config.input.display());
    for e in &manifest.events {
        let status = match e.status {
            StageStatus::Completed => "completed",
            StageStatus::Resumed => "resumed",
            StageStatus::Failed => "FAILED",
        };
        let counts: Vec<String> = e.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        print!("{:<12} {:<10} {}", e.stage, status, counts.join(" "));
        if let Some(err) = &e.error {
            print!("  {err}");
        }
        println!();
    }
    let c = manifest.counts();
    println!(
        "counts        documents={} spans={} generations={} post_filter={} unique={}",
        c.documents, c.spans, c.generations, c.post_filter_questions, c.unique_questions
    );
    Ok(())
}

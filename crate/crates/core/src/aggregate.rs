//! Frequency tables and keyword-group time series over generated questions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::generation::QuestionRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyEntry {
    pub question: String,
    /// Number of spans (records) that produced the question.
    pub span_count: u64,
    /// Number of distinct documents that produced the question.
    pub doc_count: u64,
}

/// Shard-local question counts. Counters merge associatively, so shards can
/// be counted independently and combined in any order.
#[derive(Debug, Clone, Default)]
pub struct FrequencyCounter {
    counts: HashMap<String, (u64, HashSet<String>)>,
}

impl FrequencyCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, question: &str, doc_id: &str) {
        let slot = self.counts.entry(question.to_string()).or_default();
        slot.0 += 1;
        slot.1.insert(doc_id.to_string());
    }

    pub fn add_record(&mut self, record: &QuestionRecord) {
        self.add(&record.question, &record.doc_id);
    }

    pub fn merge(&mut self, other: FrequencyCounter) {
        for (q, (spans, docs)) in other.counts {
            let slot = self.counts.entry(q).or_default();
            slot.0 += spans;
            slot.1.extend(docs);
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Entries sorted by span count descending, then question ascending.
    pub fn into_entries(self) -> Vec<FrequencyEntry> {
        let mut entries: Vec<FrequencyEntry> = self
            .counts
            .into_iter()
            .map(|(question, (spans, docs))| FrequencyEntry {
                question,
                span_count: spans,
                doc_count: docs.len() as u64,
            })
            .collect();
        sort_entries(&mut entries);
        entries
    }
}

pub fn sort_entries(entries: &mut [FrequencyEntry]) {
    entries.sort_by(|a, b| {
        b.span_count
            .cmp(&a.span_count)
            .then_with(|| a.question.cmp(&b.question))
    });
}

/// Counts records by (already normalized) question text.
pub fn count_frequencies<'a, I>(records: I) -> Vec<FrequencyEntry>
where
    I: IntoIterator<Item = &'a QuestionRecord>,
{
    let mut counter = FrequencyCounter::new();
    for r in records {
        counter.add_record(r);
    }
    counter.into_entries()
}

pub fn filter_by_doc_frequency(entries: Vec<FrequencyEntry>, min_docs: u64) -> Vec<FrequencyEntry> {
    entries.into_iter().filter(|e| e.doc_count >= min_docs).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad frequency table: {0}")]
    Invalid(String),
}

#[derive(Serialize, Deserialize)]
struct FrequencyRow {
    rank: usize,
    question: String,
    span_count: u64,
    doc_count: u64,
}

/// Writes `rank,question,span_count,doc_count` with 1-based ranks.
pub fn write_frequency_csv<W: Write>(w: W, entries: &[FrequencyEntry]) -> Result<(), TableError> {
    let mut out = csv::Writer::from_writer(w);
    for (i, e) in entries.iter().enumerate() {
        out.serialize(FrequencyRow {
            rank: i + 1,
            question: e.question.clone(),
            span_count: e.span_count,
            doc_count: e.doc_count,
        })?;
    }
    if entries.is_empty() {
        out.write_record(["rank", "question", "span_count", "doc_count"])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_frequency_csv<R: Read>(r: R) -> Result<Vec<FrequencyEntry>, TableError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize::<FrequencyRow>() {
        let row = row?;
        if row.doc_count == 0 || row.doc_count > row.span_count {
            return Err(TableError::Invalid(format!(
                "row {}: need 1 <= doc_count <= span_count",
                row.rank
            )));
        }
        out.push(FrequencyEntry {
            question: row.question,
            span_count: row.span_count,
            doc_count: row.doc_count,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        Self { year, month }
    }

    pub fn of(date: NaiveDate) -> Self {
        Self::new(date.year(), date.month())
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self::new(self.year + 1, 1)
        } else {
            Self::new(self.year, self.month + 1)
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeBucket {
    #[default]
    Month,
}

impl FromStr for TimeBucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "month" => Ok(Self::Month),
            other => Err(format!("unsupported bucket `{other}` (expected month)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhraseMatch {
    /// Plain case-insensitive substring.
    #[default]
    Literal,
    /// Substring match after stripping plural suffixes from every word.
    Stem,
}

impl FromStr for PhraseMatch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Self::Literal),
            "stem" => Ok(Self::Stem),
            other => Err(format!("unknown match mode `{other}` (expected literal|stem)")),
        }
    }
}

fn stem_word(w: &str) -> String {
    if w.len() > 4 && w.ends_with("ies") {
        format!("{}y", &w[..w.len() - 3])
    } else if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
        w[..w.len() - 1].to_string()
    } else {
        w.to_string()
    }
}

fn stem_text(text: &str) -> String {
    crate::text::words(text)
        .map(|w| stem_word(&w))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBucketSeries {
    pub label: String,
    /// Strictly increasing months, zero-filled across the covered range.
    pub buckets: Vec<(YearMonth, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSeriesReport {
    pub series: Vec<TimeBucketSeries>,
    /// Matching records without a publication date, per group label.
    pub undated: BTreeMap<String, u64>,
}

/// Counts, per keyword group, the records whose question contains any of the
/// group's phrases, bucketed by publication month.
///
/// Every series spans the same range: the first to the last month seen among
/// all dated records, with empty months reported as zero.
pub fn keyword_group_series<'a, I>(
    records: I,
    groups: &BTreeMap<String, Vec<String>>,
    _bucket: TimeBucket,
    mode: PhraseMatch,
) -> KeywordSeriesReport
where
    I: IntoIterator<Item = &'a QuestionRecord>,
{
    let prepare = |s: &str| match mode {
        PhraseMatch::Literal => s.to_lowercase(),
        PhraseMatch::Stem => stem_text(s),
    };
    let phrases: Vec<(&String, Vec<String>)> = groups
        .iter()
        .map(|(label, ps)| (label, ps.iter().map(|p| prepare(p)).collect()))
        .collect();

    let mut range: Option<(YearMonth, YearMonth)> = None;
    let mut counts: BTreeMap<&String, BTreeMap<YearMonth, u64>> = BTreeMap::new();
    let mut undated: BTreeMap<String, u64> = groups.keys().map(|k| (k.clone(), 0)).collect();

    for r in records {
        let month = r.publish_date.map(YearMonth::of);
        if let Some(m) = month {
            range = Some(match range {
                None => (m, m),
                Some((lo, hi)) => (lo.min(m), hi.max(m)),
            });
        }
        let q = prepare(&r.question);
        for (label, ps) in &phrases {
            if !ps.iter().any(|p| q.contains(p.as_str())) {
                continue;
            }
            match month {
                Some(m) => *counts.entry(label).or_default().entry(m).or_default() += 1,
                None => *undated.get_mut(label.as_str()).expect("known label") += 1,
            }
        }
    }

    let series = groups
        .keys()
        .map(|label| {
            let mut buckets = Vec::new();
            if let Some((lo, hi)) = range {
                let group = counts.get(label);
                let mut m = lo;
                loop {
                    let c = group.and_then(|g| g.get(&m)).copied().unwrap_or(0);
                    buckets.push((m, c));
                    if m == hi {
                        break;
                    }
                    m = m.succ();
                }
            }
            TimeBucketSeries {
                label: label.clone(),
                buckets,
            }
        })
        .collect();
    KeywordSeriesReport { series, undated }
}

/// Writes `group,month,count`; each group's nonzero undated count follows its
/// dated rows with month `undated`.
pub fn write_series_csv<W: Write>(w: W, report: &KeywordSeriesReport) -> Result<(), TableError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group", "month", "count"])?;
    for s in &report.series {
        for (m, c) in &s.buckets {
            out.write_record([s.label.as_str(), &m.to_string(), &c.to_string()])?;
        }
        if let Some(&n) = report.undated.get(&s.label) {
            if n > 0 {
                out.write_record([s.label.as_str(), "undated", &n.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Distinct questions, for quick unique counts.
pub fn unique_questions<'a, I>(records: I) -> BTreeSet<&'a str>
where
    I: IntoIterator<Item = &'a QuestionRecord>,
{
    records.into_iter().map(|r| r.question.as_str()).collect()
}

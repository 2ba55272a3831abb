//! Synthetic inputs for the benchmarks.

use qmine_core::{Document, QuestionRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "virus", "mask", "vaccine", "fever", "cough", "lockdown", "wuhan", "receptor", "antibody",
    "transmission", "cohort", "incidence", "mortality", "ventilator", "symptom", "contact",
    "tracing", "testing", "immunity", "outbreak",
];

/// `YYYY-MM-DD` for day `offset` of 2020, counting 28-day months.
fn date(offset: u32) -> String {
    format!("2020-{:02}-{:02}", offset / 28 % 12 + 1, offset % 28 + 1)
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(6..14);
    let mut words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect();
    let first = words[0].to_string();
    let mut cap = first[..1].to_uppercase();
    cap.push_str(&first[1..]);
    words[0] = &cap;
    format!("{}.", words.join(" "))
}

/// Documents with `passages` passages of 3 to 12 sentences each.
pub fn corpus(docs: usize, passages: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..docs)
        .map(|i| Document {
            doc_id: format!("doc{i:05}"),
            title: sentence(&mut rng),
            publish_date: date(rng.gen_range(0..336)).parse().ok(),
            passages: (0..passages)
                .map(|_| {
                    let n = rng.gen_range(3..13);
                    (0..n).map(|_| sentence(&mut rng)).collect::<Vec<_>>().join(" ")
                })
                .collect(),
        })
        .collect()
}

/// Question records drawn from `vocabulary` distinct questions over `docs`
/// documents, with a skewed question distribution.
pub fn records(n: usize, vocabulary: usize, docs: usize, seed: u64) -> Vec<QuestionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let q = (rng.gen::<f64>().powi(3) * vocabulary as f64) as usize;
            QuestionRecord {
                question: format!("what is {} {q}", WORDS[q % WORDS.len()]),
                doc_id: format!("doc{}", rng.gen_range(0..docs)),
                span_index: i,
                publish_date: date(rng.gen_range(0..336)).parse().ok(),
                backend_id: "mock".into(),
            }
        })
        .collect()
}

/// Short texts over the fixed word list, for matching and topic benchmarks.
pub fn texts(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sentence(&mut rng)).collect()
}

/// Two-block corpus of vocabulary ids: block 0 uses ids `0..v/2`, block 1
/// uses `v/2..v`.
pub fn planted_docs(docs: usize, v: u32, len: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = v / 2;
    (0..docs)
        .map(|d| {
            let base = if d % 2 == 0 { 0 } else { half };
            (0..len).map(|_| base + rng.gen_range(0..half)).collect()
        })
        .collect()
}

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::json;

/// One request as seen by [`StubServer`].
#[derive(Debug, Clone)]
pub struct Seen {
    pub method: String,
    pub path: String,
    pub body: String,
}

type Handler = dyn Fn(&Seen) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server answering each request with `handler`, closing
/// the connection after every response.
pub struct StubServer {
    pub url: String,
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

impl StubServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&Seen) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}", listener.local_addr().expect("addr"));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let handler = Arc::clone(&handler);
                let log = Arc::clone(&log);
                thread::spawn(move || serve(stream, &*handler, &log));
            }
        });
        Self { url, seen }
    }

    pub fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Seen>>) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone"));
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).expect("header");
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().expect("length");
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).expect("body");
    let seen = Seen {
        method,
        path,
        body: String::from_utf8(body).expect("utf-8"),
    };
    let (status, payload) = handler(&seen);
    log.lock().unwrap().push(seen);
    let reason = if status == 200 { "OK" } else { "Error" };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.flush();
}

const TOPICS: [&[&str]; 5] = [
    &["mask", "masks", "transmission", "droplets", "aerosol"],
    &["vaccine", "antibody", "immunity", "trial", "dose"],
    &["fever", "cough", "symptom", "patients", "hospital"],
    &["lockdown", "mobility", "policy", "wuhan", "china"],
    &["receptor", "ace2", "spike", "binding", "protein"],
];

/// Twenty documents with dated and undated entries. Each passage repeats
/// one topic term so the mock backend asks about it; documents five apart
/// share terms, giving questions that recur across documents.
pub fn synthetic_corpus() -> Vec<serde_json::Value> {
    (0..20)
        .map(|i| {
            let topic = TOPICS[i % TOPICS.len()];
            let passage = |p: usize| {
                let main = if p == 2 { topic[4] } else { topic[(i / 10 + p) % topic.len()] };
                (0..6)
                    .map(|s| {
                        let a = topic[(i + s + p + 1) % topic.len()];
                        let b = TOPICS[(i + s) % TOPICS.len()][s % 5];
                        format!("Findings on {main} in sample {s} link {main} with {a} and {b}.")
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let mut doc = json!({
                "doc_id": format!("doc{i:02}"),
                "title": format!("Notes on {} and covid", topic[0]),
                "passages": [passage(0), passage(1), "Too short.", passage(2)],
            });
            if i % 7 != 3 {
                doc["publish_date"] = json!(format!("2020-{:02}-{:02}", i % 9 + 1, i % 27 + 1));
            }
            doc
        })
        .collect()
}

pub fn write_lines(path: &Path, values: &[serde_json::Value]) {
    let mut f = std::fs::File::create(path).expect("create");
    for v in values {
        writeln!(f, "{v}").expect("write");
    }
}

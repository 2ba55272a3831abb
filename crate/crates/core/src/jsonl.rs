//! JSON-lines helpers shared by every stage that reads or writes records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub fn open(path: &Path) -> Result<BufReader<File>, JsonlError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| JsonlError::Open {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads every non-blank line of `path` as a `T`. Fails on the first bad line.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    read_from(open(path)?)
}

pub fn read_from<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            line: idx + 1,
            source,
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write<'a, T, I>(path: &Path, items: I) -> Result<usize, JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|source| JsonlError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let n = write_to(&mut w, items)?;
    w.flush()?;
    Ok(n)
}

pub fn write_to<'a, T, I, W>(w: &mut W, items: I) -> Result<usize, JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
    W: Write,
{
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    Ok(n)
}

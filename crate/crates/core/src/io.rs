//! Line-delimited JSON helpers shared by every on-disk format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl RecordError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RecordError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Non-blank lines of a UTF-8 file, with 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, RecordError> {
    let file = File::open(path).map_err(|e| RecordError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RecordError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((idx + 1, line));
        }
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|source| RecordError::Parse {
                path: path.to_path_buf(),
                line,
                source,
            })
        })
        .collect()
}

/// Line number and decode result per record.
pub type LenientRecords<T> = Vec<(usize, Result<T, serde_json::Error>)>;

/// Parses each line independently so callers can report bad records
/// without aborting.
pub fn read_jsonl_lenient<T: DeserializeOwned>(path: &Path) -> Result<LenientRecords<T>, RecordError> {
    Ok(read_lines(path)?
        .into_iter()
        .map(|(line, text)| (line, serde_json::from_str(&text)))
        .collect())
}

pub fn write_jsonl<'a, T, I>(path: &Path, records: I) -> Result<(), RecordError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|e| RecordError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize to JSON");
        writeln!(writer, "{line}").map_err(|e| RecordError::io(path, e))?;
    }
    writer.flush().map_err(|e| RecordError::io(path, e))
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), RecordError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| RecordError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RecordError> {
    let text = std::fs::read_to_string(path).map_err(|e| RecordError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| RecordError::Parse {
        path: path.to_path_buf(),
        line: 1,
        source,
    })
}

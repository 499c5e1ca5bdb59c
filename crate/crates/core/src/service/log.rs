//! Append-only JSONL event log.
//!
//! One record per line: `{"seq", "kind", "payload", "received_at"}`.
//! Sequence numbers start at 1 and are gap-free. A batch is written with a
//! single write and synced before `append` returns, so a record either
//! reached the disk whole or is an unterminated tail that recovery drops.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const LOG_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub kind: String,
    pub payload: Value,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("event log corrupt at sequence {seq} (line {line}): {message}")]
    Corrupt { seq: u64, line: usize, message: String },
}

/// What recovery found on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub records: Vec<LogRecord>,
    /// Bytes of an unterminated final line that were cut off.
    pub truncated_bytes: usize,
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    len: u64,
    next_seq: u64,
}

impl EventLog {
    /// Open (or create) `dir/events.jsonl`, truncating a torn final line.
    pub fn open(dir: impl AsRef<Path>) -> Result<(EventLog, Recovered), LogError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| LogError::Io { path: dir.to_path_buf(), source })?;
        let path = dir.join(LOG_FILE);
        let io_err = |source| LogError::Io { path: path.clone(), source };

        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(e)),
        };
        let (records, good_len) = parse_log(&bytes)?;
        let truncated_bytes = bytes.len() - good_len;

        let file = OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(io_err)?;
        if truncated_bytes > 0 {
            tracing::warn!(bytes = truncated_bytes, "truncating torn final record");
            file.set_len(good_len as u64).map_err(io_err)?;
            file.sync_data().map_err(io_err)?;
        }
        let next_seq = records.last().map_or(1, |r| r.seq + 1);
        let log = EventLog { path, file, len: good_len as u64, next_seq };
        Ok((log, Recovered { records, truncated_bytes }))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Sequence number the next record will get.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Durably append `(kind, payload)` entries, returning their records.
    /// On failure the file is cut back to its previous length.
    pub fn append(
        &mut self,
        entries: impl IntoIterator<Item = (String, Value)>,
        received_at: DateTime<Utc>,
    ) -> Result<Vec<LogRecord>, LogError> {
        let mut buf = Vec::new();
        let mut records = Vec::new();
        for (i, (kind, payload)) in entries.into_iter().enumerate() {
            let rec = LogRecord { seq: self.next_seq + i as u64, kind, payload, received_at };
            serde_json::to_writer(&mut buf, &rec).expect("log record serializes");
            buf.push(b'\n');
            records.push(rec);
        }
        if records.is_empty() {
            return Ok(records);
        }
        let written = self.file.write_all(&buf).and_then(|_| self.file.flush()).and_then(|_| self.file.sync_data());
        if let Err(source) = written {
            let _ = self.file.set_len(self.len);
            return Err(LogError::Io { path: self.path.clone(), source });
        }
        self.len += buf.len() as u64;
        self.next_seq += records.len() as u64;
        Ok(records)
    }
}

/// Parse complete lines; return the records and the byte length they span.
fn parse_log(bytes: &[u8]) -> Result<(Vec<LogRecord>, usize), LogError> {
    let mut records: Vec<LogRecord> = Vec::new();
    let mut pos = 0;
    let mut line_no = 0;
    while pos < bytes.len() {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            // unterminated tail: never acknowledged
            break;
        };
        line_no += 1;
        let line = &bytes[pos..pos + nl];
        let expected = records.last().map_or(1, |r| r.seq + 1);
        let rec: LogRecord = serde_json::from_slice(line).map_err(|e| LogError::Corrupt {
            seq: expected,
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.seq != expected {
            return Err(LogError::Corrupt {
                seq: expected,
                line: line_no,
                message: format!("expected sequence {expected}, found {}", rec.seq),
            });
        }
        records.push(rec);
        pos += nl + 1;
    }
    Ok((records, pos))
}

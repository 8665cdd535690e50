//! Append-only record journal. Every state change in a [`crate::system::System`]
//! is written here before it is applied, so replaying the journal rebuilds
//! the same state.

use std::io;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Ingest,
    Publish,
    Ping,
    Infection,
    Action,
}

/// One line of the journal. Records are strictly ordered by `(at, seq)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedLogRecord {
    pub seq: u64,
    pub kind: RecordKind,
    pub at: Timestamp,
    pub body: serde_json::Value,
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal write failed: {0}")]
    Io(#[from] io::Error),
    #[error("journal record could not be encoded: {0}")]
    Encode(#[from] serde_json::Error),
}

pub trait JournalSink: Send {
    fn append(&mut self, record: &PersistedLogRecord) -> io::Result<()>;

    /// Durability point; called on batch boundaries and shutdown.
    fn sync(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub struct Journal {
    next_seq: u64,
    /// `None` drops records without encoding them.
    sink: Option<Box<dyn JournalSink>>,
}

impl std::fmt::Debug for Journal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Journal").field("next_seq", &self.next_seq).finish_non_exhaustive()
    }
}

impl Journal {
    pub fn new(sink: Box<dyn JournalSink>) -> Self {
        Journal { next_seq: 1, sink: Some(sink) }
    }

    /// A journal that drops everything, for in-process simulation runs.
    pub fn discard() -> Self {
        Journal { next_seq: 1, sink: None }
    }

    /// Continue numbering after `last_seq` (used after recovery).
    pub fn resume(sink: Box<dyn JournalSink>, last_seq: u64) -> Self {
        Journal { next_seq: last_seq + 1, sink: Some(sink) }
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn append<T: Serialize>(&mut self, kind: RecordKind, at: Timestamp, body: &T) -> Result<u64, JournalError> {
        let seq = self.next_seq;
        if let Some(sink) = self.sink.as_mut() {
            sink.append(&PersistedLogRecord { seq, kind, at, body: serde_json::to_value(body)? })?;
        }
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn sync(&mut self) -> Result<(), JournalError> {
        match self.sink.as_mut() {
            Some(sink) => Ok(sink.sync()?),
            None => Ok(()),
        }
    }
}

/// Keeps records in memory; clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    records: Arc<Mutex<Vec<PersistedLogRecord>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<PersistedLogRecord> {
        self.records.lock().expect("journal buffer poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("journal buffer poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl JournalSink for MemorySink {
    fn append(&mut self, record: &PersistedLogRecord) -> io::Result<()> {
        self.records.lock().expect("journal buffer poisoned").push(record.clone());
        Ok(())
    }
}

/// One journal line, newline included.
pub fn encode_line(record: &PersistedLogRecord) -> Result<Vec<u8>, serde_json::Error> {
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    Ok(line)
}

/// A line that could not be read back.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("journal line {line}: {message}")]
pub struct CorruptLog {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogContents {
    pub records: Vec<PersistedLogRecord>,
    /// First unreadable line in the middle of the log; nothing after it is
    /// returned.
    pub corrupt: Option<CorruptLog>,
    /// The last line was cut short (a write interrupted by a crash). Not an
    /// error, but worth a warning.
    pub truncated_tail: Option<CorruptLog>,
    /// Length of the prefix holding `records`.
    pub good_len: usize,
}

/// Parses newline-delimited journal bytes up to the first bad record.
/// Sequence numbers must strictly increase.
pub fn read_log(bytes: &[u8]) -> LogContents {
    let mut out = LogContents::default();
    let mut offset = 0;
    let mut last_seq = 0;
    for (n, chunk) in bytes.split_inclusive(|&b| b == b'\n').enumerate() {
        let line = n + 1;
        let complete = chunk.ends_with(b"\n");
        let text = chunk.strip_suffix(b"\n").unwrap_or(chunk);
        if text.iter().all(u8::is_ascii_whitespace) {
            offset += chunk.len();
            out.good_len = offset;
            continue;
        }
        let parsed = serde_json::from_slice::<PersistedLogRecord>(text)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                if r.seq > last_seq {
                    Ok(r)
                } else {
                    Err(format!("sequence {} does not follow {}", r.seq, last_seq))
                }
            });
        match parsed {
            Ok(record) => {
                last_seq = record.seq;
                out.records.push(record);
                offset += chunk.len();
                out.good_len = offset;
            }
            Err(message) if !complete => {
                out.truncated_tail = Some(CorruptLog { line, message });
                break;
            }
            Err(message) => {
                out.corrupt = Some(CorruptLog { line, message });
                break;
            }
        }
    }
    out
}

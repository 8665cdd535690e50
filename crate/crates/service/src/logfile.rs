//! The journal on disk: newline-delimited JSON, fsynced on batch
//! boundaries.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sopwatch_core::journal::{encode_line, read_log, JournalSink, PersistedLogRecord};

use crate::config::StartupError;

pub const JOURNAL_FILE: &str = "journal.ndjson";

pub struct FileSink {
    out: BufWriter<File>,
}

impl JournalSink for FileSink {
    fn append(&mut self, record: &PersistedLogRecord) -> io::Result<()> {
        let line = encode_line(record).map_err(io::Error::other)?;
        self.out.write_all(&line)
    }

    fn sync(&mut self) -> io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }
}

pub struct OpenedLog {
    pub path: PathBuf,
    pub records: Vec<PersistedLogRecord>,
    pub sink: FileSink,
}

/// Reads the journal in `dir` (creating it if needed) and opens it for
/// appending. A half-written last line is dropped with a warning; any other
/// unreadable line is an error.
pub fn open_log(dir: &Path) -> Result<OpenedLog, StartupError> {
    let io_err = |path: &Path, e: io::Error| StartupError::Read { path: path.to_path_buf(), message: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(JOURNAL_FILE);
    let bytes = match std::fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_err(&path, e)),
    };
    let contents = read_log(&bytes);
    if let Some(bad) = contents.corrupt {
        return Err(StartupError::CorruptLog { path, line: bad.line, message: bad.message });
    }
    let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
    if let Some(tail) = contents.truncated_tail {
        tracing::warn!(path = %path.display(), line = tail.line, "dropping incomplete final journal line");
        file.set_len(contents.good_len as u64).map_err(|e| io_err(&path, e))?;
    }
    let mut out = BufWriter::new(file);
    if contents.good_len > 0 && bytes[contents.good_len - 1] != b'\n' {
        // last record is whole but unterminated
        out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| io_err(&path, e))?;
    }
    Ok(OpenedLog { path, records: contents.records, sink: FileSink { out } })
}

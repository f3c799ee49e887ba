//! Append-only response log, one JSON object per line.
//!
//! The log is the single source of truth for a run. Every entry is flushed
//! to disk before the response is acknowledged, and all scores are folds over
//! the entries.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use hype_core::{Judgment, SessionMode};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseLogEntry {
    /// Position within the session, starting at 1.
    pub seq: u64,
    pub session_id: String,
    pub run_id: String,
    pub mode: SessionMode,
    pub judgment: Judgment,
    /// Server receive time, milliseconds since the Unix epoch.
    pub received_at: u64,
    #[serde(default)]
    pub timing_flagged: bool,
}

pub struct LogWriter {
    file: File,
}

impl LogWriter {
    /// Opens `path` for appending. A torn final line left by a crash is cut
    /// off first, so new entries never follow a partial record.
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if keep < bytes.len() {
            file.set_len(keep as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Self { file })
    }

    pub fn append(&mut self, entry: &ResponseLogEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRead {
    pub entries: Vec<ResponseLogEntry>,
    /// The final line was incomplete and has been dropped.
    pub partial: bool,
}

/// Reads and checks a log: within each session, sequence numbers must run
/// 1, 2, 3, ... in file order. The first violation is reported with its byte offset.
pub fn read_log(path: &Path) -> Result<LogRead> {
    read_log_from(BufReader::new(File::open(path)?))
}

pub fn read_log_from(mut reader: impl BufRead) -> Result<LogRead> {
    let mut entries = Vec::new();
    let mut next_seq: HashMap<String, u64> = HashMap::new();
    let mut offset = 0u64;
    let mut line_no = 0usize;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.last() == Some(&b'\n');
        let text = String::from_utf8_lossy(&buf);
        if text.trim().is_empty() {
            offset += n as u64;
            continue;
        }
        let entry: ResponseLogEntry = match serde_json::from_str(text.trim_end()) {
            Ok(e) => e,
            Err(_) if !complete => return Ok(LogRead { entries, partial: true }),
            Err(e) => {
                return Err(ServiceError::Corrupt { offset, line: line_no, reason: e.to_string() });
            }
        };
        let expected = next_seq.entry(entry.session_id.clone()).or_insert(1);
        if entry.seq != *expected {
            return Err(ServiceError::Corrupt {
                offset,
                line: line_no,
                reason: format!("session {} expected seq {} but found {}", entry.session_id, expected, entry.seq),
            });
        }
        *expected += 1;
        entries.push(entry);
        offset += n as u64;
    }
    Ok(LogRead { entries, partial: false })
}

//! Persistence: a newline-delimited, append-only log of self-describing JSON
//! records, plus optional full-state snapshot files named `snapshot-<seq>`.
//!
//! Each line is one [`LogEntry`]:
//!
//! ```text
//! {"seq":7,"wall_clock":1314864000000,"scope":"dp-2","body":{"type":"kr","entry":"version",...}}
//! ```
//!
//! `seq` is strictly increasing in file order; `scope` names the decision
//! problem the record belongs to, if any.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::Annotation;
use crate::awareness::AwarenessEvent;
use crate::domain::{Actor, DecisionProblem, Document};
use crate::error::{Error, Result};
use crate::ids::DpId;
use crate::repository::RepoEntry;

pub const LOG_FILE: &str = "kcap.log";
pub const SNAPSHOT_PREFIX: &str = "snapshot-";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorRecord {
    pub actor: Actor,
    /// SHA-256 of the bearer token issued at registration, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogBody {
    Actor(ActorRecord),
    Document(Document),
    Problem(DecisionProblem),
    Annotation(Annotation),
    Kr(RepoEntry),
    Awareness(AwarenessEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    #[serde(with = "chrono::serde::ts_milliseconds")]
    pub wall_clock: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<DpId>,
    pub body: LogBody,
}

impl LogEntry {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("log entries always serialize");
        line.push('\n');
        line
    }
}

/// Parses a log stream, checking that every line is a well-formed record
/// and that sequence numbers strictly increase. Line numbers are 1-based.
pub fn parse_log(reader: impl Read) -> Result<Vec<LogEntry>> {
    let mut reader = BufReader::new(reader);
    let mut entries: Vec<LogEntry> = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        number += 1;
        if !line.ends_with('\n') {
            return Err(Error::CorruptLog {
                line: number,
                reason: "truncated record (missing newline)".into(),
            });
        }
        let entry: LogEntry =
            serde_json::from_str(line.trim_end_matches('\n')).map_err(|e| Error::CorruptLog {
                line: number,
                reason: e.to_string(),
            })?;
        if let Some(prev) = entries.last() {
            if entry.seq <= prev.seq {
                return Err(Error::CorruptLog {
                    line: number,
                    reason: format!("sequence {} does not follow {}", entry.seq, prev.seq),
                });
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    match File::open(path) {
        Ok(file) => parse_log(file),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

pub fn write_entries(path: &Path, entries: &[LogEntry]) -> Result<()> {
    let mut buf = String::new();
    for entry in entries {
        buf.push_str(&entry.to_line());
    }
    fs::write(path, buf).map_err(|source| Error::WriteFailure {
        path: path.to_owned(),
        source,
    })
}

/// Append handle on the log file.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| Error::WriteFailure {
                path: path.to_owned(),
                source,
            })?;
        Ok(Self {
            path: path.to_owned(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes all entries with a single write so an operation's records land
    /// together.
    pub fn append(&mut self, entries: &[LogEntry]) -> Result<()> {
        let mut buf = String::new();
        for entry in entries {
            buf.push_str(&entry.to_line());
        }
        let path = self.path.clone();
        let fail = |source| Error::WriteFailure { path: path.clone(), source };
        self.file.write_all(buf.as_bytes()).map_err(fail)?;
        self.file.sync_data().map_err(fail)
    }
}

pub fn snapshot_path(dir: &Path, seq: u64) -> PathBuf {
    dir.join(format!("{SNAPSHOT_PREFIX}{seq}"))
}

/// Newest snapshot file in `dir`, by the seq in its name.
pub fn latest_snapshot(dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    let mut best: Option<(u64, PathBuf)> = None;
    let entries = match fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name();
        let Some(seq) = name
            .to_str()
            .and_then(|n| n.strip_prefix(SNAPSHOT_PREFIX))
            .and_then(|n| n.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(s, _)| seq > *s) {
            best = Some((seq, entry.path()));
        }
    }
    Ok(best)
}

//! Append-only JSON-lines event logs, one file per session.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::session::SessionEvent;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads a log. A final line without a newline that fails to parse is a
/// write cut short by a crash and is ignored; `truncate` also removes it
/// from disk so later appends start on a clean line.
pub fn read_log(path: &Path, truncate: bool) -> Result<Vec<SessionEvent>, StoreError> {
    let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut good_bytes = 0u64;
    let mut line_no = 0;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|e| StoreError::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim_end();
        if text.is_empty() {
            good_bytes += n as u64;
            continue;
        }
        match serde_json::from_str::<SessionEvent>(text) {
            Ok(e) => {
                events.push(e);
                good_bytes += n as u64;
                if !complete && truncate {
                    // parsable but unterminated: terminate it for later appends
                    let mut f = OpenOptions::new()
                        .append(true)
                        .open(path)
                        .map_err(|e| StoreError::io(path, e))?;
                    f.write_all(b"\n").map_err(|e| StoreError::io(path, e))?;
                }
            }
            Err(_) if !complete => {
                if truncate {
                    let f = OpenOptions::new()
                        .write(true)
                        .open(path)
                        .map_err(|e| StoreError::io(path, e))?;
                    f.set_len(good_bytes).map_err(|e| StoreError::io(path, e))?;
                    f.sync_all().map_err(|e| StoreError::io(path, e))?;
                }
                break;
            }
            Err(err) => {
                return Err(StoreError::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: err.to_string(),
                })
            }
        }
    }
    Ok(events)
}

/// Directory of per-session logs.
#[derive(Debug, Clone)]
pub struct EventStore {
    dir: PathBuf,
}

impl EventStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().join("sessions");
        fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    /// Appends events and syncs them to disk before returning.
    pub fn append(&self, session_id: &str, events: &[SessionEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.path(session_id);
        let mut text = String::new();
        for e in events {
            text.push_str(&serde_json::to_string(e).expect("events serialize"));
            text.push('\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::io(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| StoreError::io(&path, e))?;
        f.sync_data().map_err(|e| StoreError::io(&path, e))
    }

    pub fn load(&self, session_id: &str) -> Result<Vec<SessionEvent>, StoreError> {
        read_log(&self.path(session_id), true)
    }

    /// Ids of all stored sessions, sorted.
    pub fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| StoreError::io(&self.dir, e))? {
            let entry = entry.map_err(|e| StoreError::io(&self.dir, e))?;
            let name = entry.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".jsonl")) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// Writes a complete log in one go (used by the simulator).
pub fn write_log(path: &Path, events: &[SessionEvent]) -> Result<(), StoreError> {
    let mut text = String::new();
    for e in events {
        text.push_str(&serde_json::to_string(e).expect("events serialize"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| StoreError::io(path, e))
}

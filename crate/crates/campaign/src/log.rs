//! Append-only event log plus periodic snapshots, one directory per campaign.
//!
//! `events.jsonl` holds one `{"seq": n, "event": ...}` object per line.
//! `snapshot.json` holds a full state and the sequence number it covers; it is
//! replaced atomically (write to a temp file, sync, rename).

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Durability;
use crate::state::{CampaignError, CampaignState, Event};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Snapshot {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Replay(#[from] CampaignError),
}

impl From<LogError> for CampaignError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Replay(inner) => inner,
            other => CampaignError::Storage(other.to_string()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    seq: u64,
    #[serde(flatten)]
    event: Event,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: CampaignState,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct EventLog {
    dir: PathBuf,
    file: File,
    durability: Durability,
    snapshot_every: u64,
    /// Sequence number of the last appended event.
    seq: u64,
}

impl EventLog {
    /// Starts a new log whose first entry is `created`. Fails if the
    /// directory already holds a log.
    pub fn create(
        dir: &Path,
        created: &Event,
        durability: Durability,
        snapshot_every: u64,
    ) -> Result<(EventLog, CampaignState), LogError> {
        let state = CampaignState::from_created(created)?;
        fs::create_dir_all(dir).map_err(io(dir))?;
        let path = dir.join(EVENTS_FILE);
        let file = OpenOptions::new()
            .append(true)
            .create_new(true)
            .open(&path)
            .map_err(io(&path))?;
        let mut log = EventLog {
            dir: dir.to_path_buf(),
            file,
            durability,
            snapshot_every: snapshot_every.max(1),
            seq: 0,
        };
        log.append(created)?;
        sync_dir(dir)?;
        Ok((log, state))
    }

    /// Rebuilds the state from the snapshot (if any) and the log tail. A
    /// torn final line, left by a crash mid-write, is cut off; damage
    /// anywhere else is an error.
    pub fn open(dir: &Path, durability: Durability, snapshot_every: u64) -> Result<(EventLog, CampaignState), LogError> {
        let path = dir.join(EVENTS_FILE);
        let snapshot = read_snapshot(dir)?;
        let mut state = snapshot.map(|s| s.state);

        let reader = BufReader::new(File::open(&path).map_err(io(&path))?);
        let mut good_len: u64 = 0;
        let mut seq = 0;
        let mut torn = false;
        let mut lines = reader.split(b'\n').peekable();
        let mut line_no = 0;
        let total_len = fs::metadata(&path).map_err(io(&path))?.len();
        while let Some(raw) = lines.next() {
            line_no += 1;
            let raw = raw.map_err(io(&path))?;
            let is_last = lines.peek().is_none();
            let terminated = good_len + (raw.len() as u64) < total_len;
            let parsed = std::str::from_utf8(&raw)
                .map_err(|e| e.to_string())
                .and_then(|text| serde_json::from_str::<Entry>(text).map_err(|e| e.to_string()));
            let entry = match parsed {
                Ok(entry) if terminated => entry,
                Ok(_) | Err(_) if is_last => {
                    torn = true;
                    break;
                }
                Err(reason) => {
                    return Err(LogError::Corrupt {
                        path: path.clone(),
                        line: line_no,
                        reason,
                    })
                }
                Ok(_) => unreachable!("only the last line can be unterminated"),
            };
            if entry.seq != seq + 1 {
                return Err(LogError::Corrupt {
                    path: path.clone(),
                    line: line_no,
                    reason: format!("expected seq {}, found {}", seq + 1, entry.seq),
                });
            }
            seq = entry.seq;
            good_len += raw.len() as u64 + 1;
            match &mut state {
                None => state = Some(CampaignState::from_created(&entry.event)?),
                Some(s) if entry.seq > s.seq => s.apply(&entry.event)?,
                Some(_) => {}
            }
        }
        if torn {
            tracing::warn!(path = %path.display(), line = line_no, "dropping torn final log line");
            let file = OpenOptions::new().write(true).open(&path).map_err(io(&path))?;
            file.set_len(good_len).map_err(io(&path))?;
            file.sync_all().map_err(io(&path))?;
        }
        let state = state.ok_or_else(|| LogError::Corrupt {
            path: path.clone(),
            line: 1,
            reason: "empty log".into(),
        })?;
        if state.seq != seq {
            return Err(LogError::Corrupt {
                path,
                line: line_no,
                reason: format!("snapshot covers seq {} but log ends at {seq}", state.seq),
            });
        }
        let file = OpenOptions::new().append(true).open(&path).map_err(io(&path))?;
        Ok((
            EventLog {
                dir: dir.to_path_buf(),
                file,
                durability,
                snapshot_every: snapshot_every.max(1),
                seq,
            },
            state,
        ))
    }

    /// Writes one event and makes it durable according to the policy.
    /// Returns only once the bytes have reached the OS (and disk under `Sync`).
    pub fn append(&mut self, event: &Event) -> Result<u64, LogError> {
        let entry = Entry {
            seq: self.seq + 1,
            event: event.clone(),
        };
        let mut line = serde_json::to_vec(&entry).expect("events serialize");
        line.push(b'\n');
        let path = self.dir.join(EVENTS_FILE);
        self.file.write_all(&line).map_err(io(&path))?;
        if self.durability == Durability::Sync {
            self.file.sync_data().map_err(io(&path))?;
        }
        self.seq = entry.seq;
        Ok(self.seq)
    }

    /// Writes a snapshot when the sequence number hits the snapshot period.
    pub fn maybe_snapshot(&self, state: &CampaignState) -> Result<bool, LogError> {
        if state.seq % self.snapshot_every != 0 {
            return Ok(false);
        }
        self.snapshot(state)?;
        Ok(true)
    }

    pub fn snapshot(&self, state: &CampaignState) -> Result<(), LogError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let body = serde_json::to_vec(&Snapshot {
            seq: state.seq,
            state: state.clone(),
        })
        .expect("state serializes");
        let mut file = File::create(&tmp).map_err(io(&tmp))?;
        file.write_all(&body).map_err(io(&tmp))?;
        file.sync_all().map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))?;
        sync_dir(&self.dir)
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn read_snapshot(dir: &Path) -> Result<Option<Snapshot>, LogError> {
    let path = dir.join(SNAPSHOT_FILE);
    let bytes = match fs::read(&path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(source) => return Err(LogError::Io { path, source }),
    };
    let mut snapshot: Snapshot =
        serde_json::from_slice(&bytes).map_err(|source| LogError::Snapshot { path, source })?;
    snapshot.state.rebuild_index();
    Ok(Some(snapshot))
}

fn sync_dir(dir: &Path) -> Result<(), LogError> {
    // Directory fsync makes file creation and renames durable on Unix.
    #[cfg(unix)]
    File::open(dir).and_then(|d| d.sync_all()).map_err(io(dir))?;
    #[cfg(not(unix))]
    let _ = dir;
    Ok(())
}

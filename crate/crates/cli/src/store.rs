//! Append-only journal per trial: one JSON line for the creation and one
//! per committed cohort. Replaying a journal rebuilds the trial exactly.

use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use pocrm_core::{DesignConfig, Dose};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {reason}")]
    Journal { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEntry {
    Created {
        id: Uuid,
        at: DateTime<Utc>,
        config: DesignConfig,
    },
    Cohort {
        at: DateTime<Utc>,
        dose: Dose,
        dlts: Vec<bool>,
    },
}

#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: Uuid) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    /// Appends one entry and syncs it to disk before returning.
    pub fn append(&self, id: Uuid, entry: &JournalEntry) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(entry).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path(id))?;
        file.write_all(&line)?;
        file.sync_data()?;
        Ok(())
    }

    pub fn remove(&self, id: Uuid) -> Result<(), StoreError> {
        match fs::remove_file(self.path(id)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    /// Every journal in the store, ordered by trial id.
    pub fn load(&self) -> Result<Vec<(Uuid, Vec<JournalEntry>)>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let journal = read_journal(&path)?;
            let id = match journal.first() {
                Some(JournalEntry::Created { id, .. }) => *id,
                _ => {
                    return Err(StoreError::Journal {
                        path,
                        reason: "journal does not start with a creation entry".into(),
                    })
                }
            };
            out.push((id, journal));
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }
}

fn read_journal(path: &Path) -> Result<Vec<JournalEntry>, StoreError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(
            serde_json::from_str(&line).map_err(|source| StoreError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(entries)
}

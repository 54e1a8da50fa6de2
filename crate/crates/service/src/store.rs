//! Append-only JSON-lines label store.
//!
//! Every accepted vote appends the full updated [`CommitteeRecord`] of its
//! scan as one line, so replay is "last line per scan wins" and the file
//! doubles as an audit trail of every state the record went through.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use weldqa_core::{CommitteeRecord, ConsensusRule, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("scan {0} already has consensus; relabelling is disabled")]
    Locked(String),
    #[error("label store {path}: line {line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("label store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("label store encoding: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct VoteOutcome {
    pub record: CommitteeRecord,
    /// The expert's previous vote on this scan, if this one replaced it.
    pub replaced: Option<Verdict>,
}

#[derive(Debug)]
pub struct LabelStore {
    path: PathBuf,
    file: File,
    records: BTreeMap<String, CommitteeRecord>,
    rule: ConsensusRule,
    allow_relabel: bool,
}

impl LabelStore {
    /// Opens (creating if needed) the log at `path` and replays it. A final
    /// line without its newline is a torn write from a crash and is
    /// dropped; any other unparseable line is an error.
    pub fn open(path: impl AsRef<Path>, rule: ConsensusRule, allow_relabel: bool) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut records = BTreeMap::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path)?);
            let mut line = String::new();
            let mut n = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line)?;
                if read == 0 {
                    break;
                }
                n += 1;
                let complete = line.ends_with('\n');
                if line.trim().is_empty() {
                    valid_len += read as u64;
                    continue;
                }
                match serde_json::from_str::<CommitteeRecord>(line.trim_end()) {
                    Ok(rec) => {
                        records.insert(rec.scan_id.clone(), rec);
                        valid_len += read as u64;
                    }
                    Err(_) if !complete => break,
                    Err(source) => return Err(StoreError::Corrupt { path, line: n, source }),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() != valid_len {
            file.set_len(valid_len)?;
        }
        Ok(Self {
            path,
            file,
            records,
            rule,
            allow_relabel,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rule(&self) -> ConsensusRule {
        self.rule
    }

    pub fn get(&self, scan_id: &str) -> Option<&CommitteeRecord> {
        self.records.get(scan_id)
    }

    pub fn has_consensus(&self, scan_id: &str) -> bool {
        self.records.get(scan_id).is_some_and(|r| r.consensus.is_some())
    }

    pub fn records(&self) -> impl Iterator<Item = &CommitteeRecord> {
        self.records.values()
    }

    /// Records a vote, appends the updated record and syncs it to disk
    /// before returning.
    pub fn vote(&mut self, scan_id: &str, expert_id: &str, verdict: Verdict) -> Result<VoteOutcome, StoreError> {
        let mut record = self
            .records
            .get(scan_id)
            .cloned()
            .unwrap_or_else(|| CommitteeRecord::new(scan_id));
        if record.consensus.is_some() && !self.allow_relabel {
            return Err(StoreError::Locked(scan_id.to_string()));
        }
        let replaced = record.cast_vote(expert_id, verdict, &self.rule);
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.records.insert(scan_id.to_string(), record.clone());
        Ok(VoteOutcome { record, replaced })
    }
}

//! Append-only newline-delimited JSON log of run records.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::RunConfig;
use super::parse::FuzzyMatch;
use super::validate::{ValidationResult, ValidationStatus};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamps {
    /// Wall-clock milliseconds since the Unix epoch.
    pub request_ms: u64,
    pub response_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderMeta {
    pub provider: String,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub run_id: String,
    pub config: RunConfig,
    /// Constraint ids in presentation order (lists concatenated).
    pub permutation: Vec<String>,
    /// Digest of the system and user prompts.
    pub prompt_digest: String,
    pub raw_response: String,
    pub selections: Vec<String>,
    pub reasons: BTreeMap<String, String>,
    pub compatibility: Option<String>,
    pub timestamps: Timestamps,
    pub validation: ValidationResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fuzzy_matches: Vec<FuzzyMatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_meta: Option<ProviderMeta>,
}

impl RunRecord {
    pub fn is_valid(&self) -> bool {
        self.validation.status == ValidationStatus::Valid
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("run id `{0}` already in log")]
    DuplicateRunId(String),
    #[error("log line {line}: {source}")]
    Corrupt {
        line: usize,
        source: serde_json::Error,
    },
    #[error("log line {line}: schema version {found}, expected {SCHEMA_VERSION}")]
    Schema { line: usize, found: u32 },
    #[error("serializing record: {0}")]
    Serialize(serde_json::Error),
    #[error("run log i/o: {0}")]
    Io(#[from] std::io::Error),
}

struct Inner {
    file: Option<File>,
    records: Vec<RunRecord>,
    ids: HashSet<String>,
}

/// A run log backed by a file or held in memory. Appends are serialized.
pub struct RunLog {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl RunLog {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner {
                file: None,
                records: Vec::new(),
                ids: HashSet::new(),
            }),
        }
    }

    /// Opens (or creates) a log file for appending. A torn final line left by
    /// an interrupted write is truncated away.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let (records, good_len) = read_records(&mut file)?;
        if good_len < file.metadata()?.len() {
            file.set_len(good_len)?;
        }
        file.seek(SeekFrom::End(0))?;
        let ids = records.iter().map(|r| r.run_id.clone()).collect();
        Ok(Self {
            path: Some(path),
            inner: Mutex::new(Inner {
                file: Some(file),
                records,
                ids,
            }),
        })
    }

    /// Reads all complete records from a log file without opening it for
    /// writing. A torn final line is ignored.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, LogError> {
        let mut file = File::open(path)?;
        Ok(read_records(&mut file)?.0)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, record: &RunRecord) -> Result<(), LogError> {
        let mut inner = self.inner.lock().expect("run log lock poisoned");
        if inner.ids.contains(&record.run_id) {
            return Err(LogError::DuplicateRunId(record.run_id.clone()));
        }
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_vec(record).map_err(LogError::Serialize)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        inner.ids.insert(record.run_id.clone());
        inner.records.push(record.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("run log lock poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, run_id: &str) -> bool {
        self.inner.lock().expect("run log lock poisoned").ids.contains(run_id)
    }

    pub fn run_ids(&self) -> HashSet<String> {
        self.inner.lock().expect("run log lock poisoned").ids.clone()
    }

    /// Copy of all records in append order.
    pub fn records(&self) -> Vec<RunRecord> {
        self.inner.lock().expect("run log lock poisoned").records.clone()
    }
}

/// Returns the parsed records and the byte length of the clean prefix.
fn read_records(file: &mut File) -> Result<(Vec<RunRecord>, u64), LogError> {
    file.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut good = 0u64;
    let mut buf = Vec::new();
    let mut line_no = 0;
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
            good += n as u64;
            continue;
        }
        // an unterminated last line is a torn write, even if it parses
        if !complete {
            break;
        }
        match serde_json::from_str::<RunRecord>(text.trim_end()) {
            Ok(r) => {
                if r.schema != SCHEMA_VERSION {
                    return Err(LogError::Schema {
                        line: line_no,
                        found: r.schema,
                    });
                }
                records.push(r);
                good += n as u64;
            }
            Err(e) => return Err(LogError::Corrupt { line: line_no, source: e }),
        }
    }
    Ok((records, good))
}

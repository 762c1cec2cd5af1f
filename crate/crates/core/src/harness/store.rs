//! Append-only JSON-lines storage for trial records and cached thresholds.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::sweep::TrialDescriptor;
use crate::error::{Error, Result};
use crate::metrics::{MetricTrace, SuccessThreshold};

pub const SCHEMA_VERSION: u32 = 1;
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const THRESHOLDS_FILE: &str = "thresholds.jsonl";
pub const TRACES_DIR: &str = "traces";

/// One line of `trials.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTrial {
    pub schema: u32,
    pub config_hash: String,
    #[serde(flatten)]
    pub descriptor: TrialDescriptor,
    pub threshold: Option<f64>,
    pub success: bool,
    pub solved_at: Option<u64>,
    pub selected_iteration: Option<u64>,
    pub sparsity_error: Option<f64>,
    pub gate_sparsity: Option<f64>,
    pub final_interp_mse: Option<f64>,
    pub final_extrap_mse: Option<f64>,
    pub diverged: bool,
    /// Set when the trial could not run to completion.
    pub error: Option<String>,
}

impl StoredTrial {
    pub fn outcome(&self) -> crate::stats::Outcome {
        crate::stats::Outcome {
            success: self.success,
            solved_at: self.solved_at,
            sparsity_error: self.sparsity_error,
            errored: self.error.is_some(),
        }
    }
}

/// Reads a JSON-lines file. A final line without its newline is the remnant
/// of an interrupted write and is ignored; any other malformed line is an
/// error.
fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Vec<T>, u64)> {
    let mut out = Vec::new();
    let mut valid_len = 0u64;
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((out, 0)),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        number += 1;
        if !line.ends_with('\n') {
            log::warn!("{}: ignoring incomplete final line {number}", path.display());
            break;
        }
        valid_len += n as u64;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("{}:{number}: malformed record: {e}", path.display())))?;
        out.push(value);
    }
    Ok((out, valid_len))
}

fn open_append(path: &Path, valid_len: u64) -> Result<File> {
    let file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    if file.metadata()?.len() > valid_len {
        file.set_len(valid_len)?;
    }
    Ok(file)
}

fn write_line<T: Serialize>(file: &mut File, value: &T) -> Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.flush()?;
    Ok(())
}

/// Trial records of a results directory, read without taking the writer.
pub fn read_records(dir: &Path) -> Result<Vec<StoredTrial>> {
    let path = if dir.is_dir() { dir.join(TRIALS_FILE) } else { dir.to_path_buf() };
    if !path.exists() {
        return Err(Error::Config(format!("no trial store at {}", path.display())));
    }
    Ok(read_lines(&path)?.0)
}

/// Results directory: the trial log, the threshold cache and optional traces.
pub struct ResultStore {
    dir: PathBuf,
    completed: HashSet<String>,
    len: usize,
    trials: Mutex<File>,
}

impl ResultStore {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(TRIALS_FILE);
        let (records, valid_len): (Vec<StoredTrial>, u64) = read_lines(&path)?;
        let completed: HashSet<String> = records.iter().map(|r| r.descriptor.trial_id.clone()).collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            len: records.len(),
            completed,
            trials: Mutex::new(open_append(&path, valid_len)?),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Records present when the store was opened.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_completed(&self, trial_id: &str) -> bool {
        self.completed.contains(trial_id)
    }

    /// Appends one record and flushes it before returning.
    pub fn append(&self, record: &StoredTrial) -> Result<()> {
        let mut file = self.trials.lock().unwrap_or_else(|e| e.into_inner());
        write_line(&mut file, record)
    }

    pub fn records(&self) -> Result<Vec<StoredTrial>> {
        read_records(&self.dir)
    }

    pub fn write_trace(&self, trial_id: &str, trace: &MetricTrace) -> Result<()> {
        let dir = self.dir.join(TRACES_DIR);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(format!("{trial_id}.json")), serde_json::to_vec(trace)?)?;
        Ok(())
    }

    pub fn read_trace(&self, trial_id: &str) -> Result<MetricTrace> {
        let mut s = String::new();
        File::open(self.dir.join(TRACES_DIR).join(format!("{trial_id}.json")))?.read_to_string(&mut s)?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Persistent cache of simulated thresholds keyed by
/// `(spec hash, epsilon, n_sim, seed)`.
pub struct ThresholdCache {
    path: PathBuf,
    entries: Vec<SuccessThreshold>,
}

impl ThresholdCache {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(THRESHOLDS_FILE);
        let (entries, valid_len) = read_lines(&path)?;
        open_append(&path, valid_len)?;
        Ok(Self { path, entries })
    }

    pub fn get(&self, spec_hash: &str, epsilon: f64, n_sim: usize, seed: u64) -> Option<&SuccessThreshold> {
        self.entries
            .iter()
            .find(|t| t.spec_hash == spec_hash && t.epsilon == epsilon && t.n_sim == n_sim && t.sim_seed == seed)
    }

    pub fn insert(&mut self, threshold: SuccessThreshold) -> Result<()> {
        if self
            .get(&threshold.spec_hash, threshold.epsilon, threshold.n_sim, threshold.sim_seed)
            .is_some()
        {
            return Ok(());
        }
        let mut file = OpenOptions::new().append(true).open(&self.path)?;
        write_line(&mut file, &threshold)?;
        self.entries.push(threshold);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

//! Sweep expansion and execution.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::SweepConfig;
use super::store::{ResultStore, StoredTrial, ThresholdCache, SCHEMA_VERSION};
use crate::dataset::{DatasetSpec, Operation, RangeSpec};
use crate::error::{Error, Result};
use crate::metrics::{simulate_threshold, threshold_spec_hash, SuccessThreshold};
use crate::model::ModelKind;
use crate::par::{map_with_workers, Parallelism};
use crate::trainer::{run_trial, TrainConfig, TrialRecord};

/// One trial to run: everything that identifies it plus its derived seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDescriptor {
    pub trial_id: String,
    pub experiment: String,
    pub model: ModelKind,
    pub op: Operation,
    pub interp: RangeSpec,
    pub extrap: RangeSpec,
    pub input_size: usize,
    pub subset_ratio: f64,
    pub overlap_ratio: f64,
    pub hidden_size: usize,
    pub seed_index: u64,
    pub seed: u64,
    pub iterations: u64,
}

impl TrialDescriptor {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            op: self.op,
            interp: self.interp.clone(),
            extrap: self.extrap.clone(),
            input_size: self.input_size,
            subset_ratio: self.subset_ratio,
            overlap_ratio: self.overlap_ratio,
        }
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            hidden_size: self.hidden_size,
            seed: self.seed,
            eval_every: base.eval_every.min(self.iterations),
            ..base.clone()
        }
    }
}

/// A parameter combination that was skipped, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub experiment: String,
    pub task: String,
    /// Trials the combination would have produced.
    pub trials: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expansion {
    pub trials: Vec<TrialDescriptor>,
    pub rejected: Vec<Rejected>,
}

fn digest(value: &serde_json::Value) -> [u8; 32] {
    Sha256::digest(value.to_string().as_bytes()).into()
}

/// Task seed from the task and seed index only, so every model in a cell
/// sees the same data and adding entries elsewhere changes nothing.
fn task_seed(spec: &DatasetSpec, seed_index: u64) -> u64 {
    let d = digest(&serde_json::json!({ "task": spec, "seed_index": seed_index }));
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn trial_id(experiment: &str, model: ModelKind, hidden: usize, spec: &DatasetSpec, seed_index: u64, train: &TrainConfig) -> String {
    let d = digest(&serde_json::json!({
        "experiment": experiment,
        "model": model,
        "hidden_size": hidden,
        "task": spec,
        "seed_index": seed_index,
        "train": TrainConfig { seed: 0, hidden_size: hidden, ..train.clone() },
    }));
    hex::encode(&d[..8])
}

/// Expands every `[[experiment]]` block into its cross product of
/// `model × op × range × d × s × o × hidden × seed`, in that nesting order.
pub fn expand_sweep(config: &SweepConfig) -> Result<Expansion> {
    config.validate()?;
    let mut out = Expansion::default();
    for e in &config.experiments {
        let iterations = e.iterations.unwrap_or(config.train.iterations);
        let train = TrainConfig {
            iterations,
            eval_every: config.train.eval_every.min(iterations),
            ..config.train.clone()
        };
        let seeds = e.seeds.values();
        let mut specs = Vec::new();
        for &op in &e.ops {
            for r in &e.ranges {
                for &d in &e.input_size {
                    for &s in &e.subset_ratio {
                        for &o in &e.overlap_ratio {
                            let spec = DatasetSpec {
                                op,
                                interp: r.interp.clone(),
                                extrap: r.extrap.clone(),
                                input_size: d,
                                subset_ratio: s,
                                overlap_ratio: o,
                            };
                            match spec.validate() {
                                Ok(()) => specs.push(spec),
                                Err(err) => out.rejected.push(Rejected {
                                    experiment: e.name.clone(),
                                    task: format!("{op} {} -> {} d={d} s={s} o={o}", r.interp, r.extrap),
                                    trials: e.models.len() * e.hidden_size.len() * seeds.len(),
                                    reason: err.to_string(),
                                }),
                            }
                        }
                    }
                }
            }
        }
        for &model in &e.models {
            for spec in &specs {
                for &hidden in &e.hidden_size {
                    for &seed_index in &seeds {
                        out.trials.push(TrialDescriptor {
                            trial_id: trial_id(&e.name, model, hidden, spec, seed_index, &train),
                            experiment: e.name.clone(),
                            model,
                            op: spec.op,
                            interp: spec.interp.clone(),
                            extrap: spec.extrap.clone(),
                            input_size: spec.input_size,
                            subset_ratio: spec.subset_ratio,
                            overlap_ratio: spec.overlap_ratio,
                            hidden_size: hidden,
                            seed_index,
                            seed: task_seed(spec, seed_index),
                            iterations,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Thresholds for every distinct task among `trials`, from the cache or
/// freshly simulated (and then cached).
pub fn ensure_thresholds(
    config: &SweepConfig,
    trials: &[TrialDescriptor],
    cache: &mut ThresholdCache,
    mode: Parallelism,
) -> Result<HashMap<String, SuccessThreshold>> {
    let mut specs: BTreeMap<String, DatasetSpec> = BTreeMap::new();
    for t in trials {
        let spec = t.spec();
        specs.entry(threshold_spec_hash(&spec)).or_insert(spec);
    }
    let th = &config.threshold;
    let mut out = HashMap::new();
    for (hash, spec) in specs {
        let value = match cache.get(&hash, th.epsilon, th.n_sim, th.seed) {
            Some(t) => t.clone(),
            None => {
                log::info!("simulating threshold for {} {} -> {}", spec.op, spec.interp, spec.extrap);
                let t = simulate_threshold(&spec, th.epsilon, th.n_sim, th.seed, mode)?;
                cache.insert(t.clone())?;
                t
            }
        };
        out.insert(hash, value);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub planned: usize,
    pub rejected: usize,
    pub skipped: usize,
    pub executed: usize,
    pub succeeded: usize,
    pub errored: usize,
    /// Pending trials left for a later `--resume` because of `limit`.
    pub remaining: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    pub resume: bool,
    /// Run at most this many pending trials, then stop.
    pub limit: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            resume: false,
            limit: None,
        }
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

fn execute<F>(config: &SweepConfig, config_hash: &str, d: &TrialDescriptor, threshold: &SuccessThreshold, store: &ResultStore, run: F) -> Result<StoredTrial>
where
    F: FnOnce(ModelKind, &DatasetSpec, &TrainConfig, &SuccessThreshold) -> Result<TrialRecord>,
{
    let train = d.train_config(&config.train);
    let spec = d.spec();
    let result = catch_unwind(AssertUnwindSafe(|| run(d.model, &spec, &train, threshold)));
    let mut stored = StoredTrial {
        schema: SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        descriptor: d.clone(),
        threshold: Some(threshold.value),
        success: false,
        solved_at: None,
        selected_iteration: None,
        sparsity_error: None,
        gate_sparsity: None,
        final_interp_mse: None,
        final_extrap_mse: None,
        diverged: false,
        error: None,
    };
    match result {
        Ok(Ok(r)) => {
            if config.store_traces {
                store.write_trace(&d.trial_id, &r.trace)?;
            }
            stored.success = r.success;
            stored.solved_at = r.solved_at;
            stored.selected_iteration = r.selected_iteration;
            stored.sparsity_error = r.sparsity_error;
            stored.gate_sparsity = r.gate_sparsity;
            stored.final_interp_mse = r.final_interp_mse;
            stored.final_extrap_mse = r.final_extrap_mse;
            stored.diverged = r.diverged;
        }
        Ok(Err(e)) => stored.error = Some(e.to_string()),
        Err(p) => stored.error = Some(format!("panic: {}", panic_message(p.as_ref()))),
    }
    Ok(stored)
}

/// Runs every pending trial of `config`, appending records under `dir`.
///
/// Trials already in the store are skipped, so an interrupted sweep resumes
/// where it stopped. A non-empty store is only reused with `resume`.
pub fn run_sweep(config: &SweepConfig, dir: &Path, options: RunOptions) -> Result<RunReport> {
    if options.workers == 0 {
        return Err(Error::Argument("workers must be at least 1".into()));
    }
    let expansion = expand_sweep(config)?;
    for r in &expansion.rejected {
        log::warn!("rejected {} trials of '{}' ({}): {}", r.trials, r.experiment, r.task, r.reason);
    }
    let store = ResultStore::open(dir)?;
    if !store.is_empty() && !options.resume {
        return Err(Error::Precondition(format!(
            "{} already holds {} records; pass resume to continue it",
            dir.display(),
            store.len()
        )));
    }
    let config_hash = config.config_hash();
    std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(config)?)?;

    let pending: Vec<TrialDescriptor> = expansion
        .trials
        .iter()
        .filter(|t| !store.is_completed(&t.trial_id))
        .cloned()
        .collect();
    let skipped = expansion.trials.len() - pending.len();
    let take = options.limit.map_or(pending.len(), |l| l.min(pending.len()));
    let batch = &pending[..take];

    let mode = if options.workers > 1 { Parallelism::Parallel } else { Parallelism::Sequential };
    let mut cache = ThresholdCache::open(dir)?;
    let thresholds = ensure_thresholds(config, batch, &mut cache, mode)?;

    log::info!("running {} trials ({} already done) on {} workers", batch.len(), skipped, options.workers);
    let results = map_with_workers(batch, options.workers, |d| -> Result<StoredTrial> {
        let threshold = &thresholds[&threshold_spec_hash(&d.spec())];
        let stored = execute(config, &config_hash, d, threshold, &store, run_trial)?;
        store.append(&stored)?;
        log::info!(
            "{} {} {} seed {}: success={} solved_at={:?}{}",
            d.experiment,
            d.model,
            d.op,
            d.seed_index,
            stored.success,
            stored.solved_at,
            stored.error.as_deref().map(|e| format!(" error={e}")).unwrap_or_default()
        );
        Ok(stored)
    })?;
    let mut report = RunReport {
        planned: expansion.trials.len(),
        rejected: expansion.rejected.iter().map(|r| r.trials).sum(),
        skipped,
        remaining: pending.len() - take,
        ..RunReport::default()
    };
    for r in results {
        let r = r?;
        report.executed += 1;
        report.succeeded += usize::from(r.success);
        report.errored += usize::from(r.error.is_some());
    }
    Ok(report)
}

/// Simulates and caches the thresholds a config needs without training.
pub fn precompute_thresholds(config: &SweepConfig, dir: &Path, mode: Parallelism) -> Result<Vec<SuccessThreshold>> {
    let expansion = expand_sweep(config)?;
    let mut cache = ThresholdCache::open(dir)?;
    let map = ensure_thresholds(config, &expansion.trials, &mut cache, mode)?;
    let mut out: Vec<SuccessThreshold> = map.into_values().collect();
    out.sort_by(|a, b| a.spec_hash.cmp(&b.spec_hash));
    Ok(out)
}

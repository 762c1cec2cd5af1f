//! One trial: Adam-trained MSE regression of a two-layer model on freshly
//! sampled interpolation batches, evaluated every `eval_every` steps on a
//! fixed validation set (interpolation range) and a fixed test set
//! (extrapolation range).

use serde::{Deserialize, Serialize};

use crate::dataset::{fixed_eval_set, sample_into, DatasetSpec, SampleBatch, Split, Task};
use crate::error::{Error, Result};
use crate::layers::DEFAULT_LAYER_EPS;
use crate::matrix::Matrix2D;
use crate::metrics::{gate_sparsity, is_success, solved_at, sparsity_error, Checkpoint, MetricTrace, SuccessThreshold};
use crate::model::{mse, ModelKind, ModelParams, DEFAULT_HIDDEN_SIZE};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{derive_seed, derived, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub eval_every: u64,
    /// Observations in each of the fixed validation and test sets.
    pub eval_size: usize,
    pub hidden_size: usize,
    pub eps_layer: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5_000_000,
            batch_size: 128,
            eval_every: 1000,
            eval_size: 10_000,
            hidden_size: DEFAULT_HIDDEN_SIZE,
            eps_layer: DEFAULT_LAYER_EPS,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.eval_size == 0 || self.hidden_size == 0 {
            return Err(Error::Config(
                "iterations, batch_size, eval_size and hidden_size must be positive".into(),
            ));
        }
        if self.eval_every == 0 || self.eval_every > self.iterations {
            return Err(Error::Config(format!(
                "eval_every {} must be in 1..={}",
                self.eval_every, self.iterations
            )));
        }
        if !(self.eps_layer > 0.0) {
            return Err(Error::Config("eps_layer must be positive".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub model: ModelKind,
    pub spec: DatasetSpec,
    pub seed: u64,
    pub hidden_size: usize,
    pub iterations: u64,
    pub threshold: f64,
    pub success: bool,
    pub solved_at: Option<u64>,
    /// Checkpoint chosen by validation MSE among successful checkpoints.
    pub selected_iteration: Option<u64>,
    pub sparsity_error: Option<f64>,
    /// NALU only: gate distance from a hard selection at the selected checkpoint.
    pub gate_sparsity: Option<f64>,
    pub final_interp_mse: Option<f64>,
    pub final_extrap_mse: Option<f64>,
    pub diverged: bool,
    pub diverged_at: Option<u64>,
    #[serde(default)]
    pub trace: MetricTrace,
}

/// Checkpoint with the smallest validation MSE; earliest wins ties.
pub fn select_checkpoint(checkpoints: &[Checkpoint]) -> Option<&Checkpoint> {
    checkpoints.iter().fold(None, |best: Option<&Checkpoint>, c| match best {
        Some(b) if b.interp_mse <= c.interp_mse => Some(b),
        _ if c.interp_mse.is_nan() => best,
        _ => Some(c),
    })
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn gradients_finite(g: &crate::model::Gradients) -> bool {
    g.tensors().iter().all(|t| t.is_finite())
}

struct Evaluator {
    validation: SampleBatch,
    test: SampleBatch,
}

impl Evaluator {
    fn checkpoint(&self, model: &ModelParams, iteration: u64) -> Result<Checkpoint> {
        let (val_pred, cache) = model.forward(&self.validation.x)?;
        let interp_mse = mse(val_pred.data(), &self.validation.t);
        let extrap_mse = mse(&model.predict(&self.test.x)?, &self.test.t);
        let gates = [cache.layer1().gate_values(), cache.layer2().gate_values()];
        let gate = if gates.iter().any(Option::is_some) {
            Some(gates.iter().flatten().map(|g: &&Matrix2D| gate_sparsity(g)).fold(0.0, f64::max))
        } else {
            None
        };
        Ok(Checkpoint {
            iteration,
            interp_mse,
            extrap_mse,
            sparsity_error: sparsity_error(model),
            gate_sparsity: gate,
        })
    }
}

/// Trains one model on one task and evaluates it against `threshold`.
///
/// Divergence (a non-finite loss, gradient or parameter) ends the trial and
/// marks it failed; it is not an error.
pub fn run_trial(kind: ModelKind, spec: &DatasetSpec, config: &TrainConfig, threshold: &SuccessThreshold) -> Result<TrialRecord> {
    config.validate()?;
    let seed = config.seed;
    let task = Task::sample(spec.clone(), &mut derived(seed, stream::GEOMETRY))?;
    let mut model = ModelParams::init(kind, spec.input_size, config.hidden_size, config.eps_layer, &mut derived(seed, stream::INIT))?;
    let evaluator = Evaluator {
        validation: fixed_eval_set(&task, Split::Interpolation, config.eval_size, derive_seed(seed, stream::VALIDATION))?,
        test: fixed_eval_set(&task, Split::Extrapolation, config.eval_size, derive_seed(seed, stream::TEST))?,
    };
    let mut train_rng = derived(seed, stream::TRAIN);
    let mut batch = SampleBatch {
        x: Matrix2D::zeros(config.batch_size, spec.input_size),
        t: vec![0.0; config.batch_size],
    };
    let mut state = AdamState::new(model.tensors());
    let mut trace = MetricTrace::default();
    let mut diverged_at = None;

    for it in 1..=config.iterations {
        sample_into(&task, Split::Interpolation, &mut train_rng, &mut batch);
        let (loss, grads) = model.mse_and_gradients(&batch.x, &batch.t)?;
        if !loss.is_finite() || !gradients_finite(&grads) {
            diverged_at = Some(it);
            break;
        }
        adam_step(model.tensors_mut(), grads.tensors(), &mut state, &config.adam)?;
        if !model.is_finite() {
            diverged_at = Some(it);
            break;
        }
        if it % config.eval_every == 0 {
            trace.push(evaluator.checkpoint(&model, it)?)?;
        }
    }

    let diverged = diverged_at.is_some();
    let solved = if diverged { None } else { solved_at(&trace, threshold) };
    let successful: Vec<Checkpoint> = trace
        .checkpoints
        .iter()
        .copied()
        .filter(|c| is_success(c.extrap_mse, threshold))
        .collect();
    let selected = if solved.is_some() {
        select_checkpoint(&successful).copied()
    } else {
        None
    };
    let last = trace.last().copied();

    Ok(TrialRecord {
        model: kind,
        spec: spec.clone(),
        seed,
        hidden_size: config.hidden_size,
        iterations: config.iterations,
        threshold: threshold.value,
        success: solved.is_some(),
        solved_at: solved,
        selected_iteration: selected.map(|c| c.iteration),
        sparsity_error: selected.map(|c| c.sparsity_error),
        gate_sparsity: selected.and_then(|c| c.gate_sparsity),
        final_interp_mse: last.and_then(|c| finite(c.interp_mse)),
        final_extrap_mse: last.and_then(|c| finite(c.extrap_mse)),
        diverged,
        diverged_at,
        trace,
    })
}

//! Success criterion, solved-at extraction and sparsity error.
//!
//! A model succeeds when its extrapolation MSE falls strictly below the MSE
//! of a simulated nearly-perfect solution: one that applies the operation
//! exactly but whose window-sum weights are each off by `±ε`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetSpec, Split, Task};
use crate::error::{Error, Result};
use crate::matrix::Matrix2D;
use crate::model::ModelParams;
use crate::par::{self, Parallelism};
use crate::rng::derived;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_N_SIM: usize = 1_000_000;

/// Observations per independently seeded simulation chunk. Fixed so the
/// threshold does not depend on the number of threads.
const SIM_CHUNK: usize = 8192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessThreshold {
    pub value: f64,
    pub spec_hash: String,
    pub epsilon: f64,
    pub n_sim: usize,
    pub sim_seed: u64,
}

/// Stable identifier of the parts of a spec the threshold depends on.
pub fn threshold_spec_hash(spec: &DatasetSpec) -> String {
    let key = serde_json::json!({
        "op": spec.op,
        "extrap": spec.extrap,
        "input_size": spec.input_size,
        "subset_ratio": spec.subset_ratio,
        "overlap_ratio": spec.overlap_ratio,
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    hex::encode(&digest[..8])
}

/// Perfect window weights `W*`: a `2 × d` indicator matrix.
pub fn perfect_weights(task: &Task) -> Matrix2D {
    let g = &task.geometry;
    Matrix2D::from_fn(2, task.spec.input_size, |r, c| {
        let window = if r == 0 { &g.a } else { &g.b };
        if window.contains(&c) {
            1.0
        } else {
            0.0
        }
    })
}

/// Simulates the nearly-perfect-solution MSE on the extrapolation range.
///
/// Every entry of `W*` (zeros included) is perturbed by `+ε` or `−ε` with
/// equal probability, independently per entry and per observation. The
/// window geometry is frozen at the midpoint of the offset interval.
pub fn simulate_threshold(spec: &DatasetSpec, epsilon: f64, n_sim: usize, seed: u64, mode: Parallelism) -> Result<SuccessThreshold> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be non-negative, got {epsilon}")));
    }
    if n_sim == 0 {
        return Err(Error::Argument("n_sim must be at least 1".into()));
    }
    let task = Task::new(spec.clone(), spec.midpoint_geometry()?)?;
    let d = spec.input_size;
    let range = spec.range(Split::Extrapolation);
    let chunks = n_sim.div_ceil(SIM_CHUNK);

    let partial = par::map_indexed(chunks, mode, |c| {
        let mut rng = derived(seed, c as u64);
        let n = SIM_CHUNK.min(n_sim - c * SIM_CHUNK);
        let mut x = vec![0.0; d];
        let mut acc = 0.0;
        for _ in 0..n {
            for v in x.iter_mut() {
                *v = range.sample(&mut rng);
            }
            let (a, b) = task.geometry.sums(&x);
            let t = spec.op.apply(a, b);
            let (mut err_a, mut err_b) = (0.0, 0.0);
            let mut bits = 0u64;
            for (j, &xv) in x.iter().enumerate() {
                if j % 32 == 0 {
                    bits = rng.random();
                }
                err_a += if bits & 1 == 1 { xv } else { -xv };
                err_b += if bits & 2 == 2 { xv } else { -xv };
                bits >>= 2;
            }
            let r = spec.op.apply(a + epsilon * err_a, b + epsilon * err_b) - t;
            acc += r * r;
        }
        acc
    });
    let value = partial.iter().sum::<f64>() / n_sim as f64;
    Ok(SuccessThreshold {
        value,
        spec_hash: threshold_spec_hash(spec),
        epsilon,
        n_sim,
        sim_seed: seed,
    })
}

pub fn is_success(extrap_mse: f64, threshold: &SuccessThreshold) -> bool {
    extrap_mse < threshold.value
}

/// Stores non-finite values as `null` (JSON has no infinity) and reads
/// `null` back as `+inf`.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    #[serde(with = "nonfinite")]
    pub interp_mse: f64,
    #[serde(with = "nonfinite")]
    pub extrap_mse: f64,
    #[serde(with = "nonfinite")]
    pub sparsity_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_sparsity: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTrace {
    pub checkpoints: Vec<Checkpoint>,
}

impl MetricTrace {
    pub fn push(&mut self, c: Checkpoint) -> Result<()> {
        if let Some(last) = self.checkpoints.last() {
            if c.iteration <= last.iteration {
                return Err(Error::Precondition(format!(
                    "checkpoint iteration {} does not follow {}",
                    c.iteration, last.iteration
                )));
            }
        }
        self.checkpoints.push(c);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

/// First checkpoint whose extrapolation MSE passes the criterion.
pub fn solved_at(trace: &MetricTrace, threshold: &SuccessThreshold) -> Option<u64> {
    trace
        .checkpoints
        .iter()
        .find(|c| is_success(c.extrap_mse, threshold))
        .map(|c| c.iteration)
}

#[inline]
fn distance_to_sparse(w: f64) -> f64 {
    let a = w.abs();
    a.min((1.0 - a).abs())
}

/// `maxᵢ min(|Wᵢ|, |1 − |Wᵢ||)` over every effective weight of both layers.
///
/// Lies in `[0, 0.5]` whenever all weights are in `[-1.5, 1.5]`, which
/// always holds for the accumulator units. Raw Linear weights can leave
/// that band.
pub fn sparsity_error(model: &ModelParams) -> f64 {
    model
        .effective_weights()
        .iter()
        .flat_map(|w| w.data().iter().copied())
        .map(distance_to_sparse)
        .fold(0.0, f64::max)
}

/// The same distance applied to gate activations, i.e. how far the gates are
/// from a hard 0/1 selection.
pub fn gate_sparsity(gates: &Matrix2D) -> f64 {
    gates.data().iter().copied().map(distance_to_sparse).fold(0.0, f64::max)
}

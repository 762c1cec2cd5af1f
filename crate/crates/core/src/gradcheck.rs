//! Central finite-difference verification of the analytic backward passes.
//!
//! The checker only ever calls the forward pass; it shares no code with
//! `backward_layer` beyond the parameter layout.

use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::layers::{backward_layer, forward_layer, init_params, LayerKind, LayerParams, DEFAULT_LAYER_EPS};
use crate::matrix::Matrix2D;
use crate::model::{ModelKind, ModelParams};
use crate::rng::{derive_seed, seeded, Rng};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Denominator floor so that entries whose true gradient is ~0 are compared
/// absolutely instead of dividing rounding noise by a tiny number.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub subject: String,
    pub tensor: String,
    pub entries: usize,
    pub max_relative_error: f64,
}

impl TensorCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

fn random_input(batch: usize, in_dim: usize, rng: &mut Rng) -> Matrix2D {
    // keep magnitudes away from 0, where |x| is not differentiable
    Matrix2D::from_fn(batch, in_dim, |_, _| {
        let mag = rng.random_range(0.5..2.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

fn random_params(p: &mut LayerParams, rng: &mut Rng) {
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
    }
}

fn weighted_sum(z: &Matrix2D, upstream: &Matrix2D) -> f64 {
    z.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
}

/// Checks every parameter tensor and the input gradient of one layer on a
/// random `batch × in_dim` instance with loss `L = Σ u ⊙ z` for random `u`.
pub fn check_layer(kind: LayerKind, batch: usize, in_dim: usize, out_dim: usize, seed: u64, step: f64) -> Result<Vec<TensorCheck>> {
    let eps = DEFAULT_LAYER_EPS;
    let mut rng = seeded(seed);
    let mut params = init_params(kind, in_dim, out_dim, &mut rng)?;
    random_params(&mut params, &mut rng);
    let x = random_input(batch, in_dim, &mut rng);
    let upstream = Matrix2D::from_fn(batch, out_dim, |_, _| rng.random_range(-1.0..1.0));

    let (_, cache) = forward_layer(&params, &x, eps)?;
    let (grads, dx) = backward_layer(&params, &x, &cache, &upstream, eps)?;

    let loss = |p: &LayerParams, x: &Matrix2D| -> Result<f64> { Ok(weighted_sum(&forward_layer(p, x, eps)?.0, &upstream)) };

    let subject = format!("{kind:?}");
    let mut out = Vec::new();
    let names = params.tensor_names();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data().to_vec()).collect();
    for (ti, name) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        let n = analytic[ti].len();
        for i in 0..n {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data_mut()[i] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data_mut()[i] -= step;
            let numeric = (loss(&plus, &x)? - loss(&minus, &x)?) / (2.0 * step);
            worst = worst.max(relative_error(analytic[ti][i], numeric));
        }
        out.push(TensorCheck {
            subject: subject.clone(),
            tensor: (*name).to_string(),
            entries: n,
            max_relative_error: worst,
        });
    }

    let mut worst = 0.0f64;
    for i in 0..x.data().len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += step;
        let mut xm = x.clone();
        xm.data_mut()[i] -= step;
        let numeric = (loss(&params, &xp)? - loss(&params, &xm)?) / (2.0 * step);
        worst = worst.max(relative_error(dx.data()[i], numeric));
    }
    out.push(TensorCheck {
        subject,
        tensor: "input".to_string(),
        entries: x.data().len(),
        max_relative_error: worst,
    });
    Ok(out)
}

/// Checks the full two-layer model under the MSE loss.
pub fn check_model(kind: ModelKind, batch: usize, in_dim: usize, hidden: usize, seed: u64, step: f64) -> Result<Vec<TensorCheck>> {
    let mut rng = seeded(seed);
    let mut model = ModelParams::init(kind, in_dim, hidden, DEFAULT_LAYER_EPS, &mut rng)?;
    random_params(&mut model.layer1, &mut rng);
    random_params(&mut model.layer2, &mut rng);
    let x = Matrix2D::from_fn(batch, in_dim, |_, _| rng.random_range(0.5..2.0));
    let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(1.0..4.0)).collect();

    let (_, grads) = model.mse_and_gradients(&x, &targets)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data().to_vec()).collect();
    let names: Vec<String> = model
        .layer1
        .tensor_names()
        .iter()
        .map(|n| format!("layer1.{n}"))
        .chain(model.layer2.tensor_names().iter().map(|n| format!("layer2.{n}")))
        .collect();

    let mut out = Vec::new();
    for (ti, name) in names.into_iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..analytic[ti].len() {
            let mut plus = model.clone();
            plus.tensors_mut()[ti].data_mut()[i] += step;
            let mut minus = model.clone();
            minus.tensors_mut()[ti].data_mut()[i] -= step;
            let numeric = (plus.mse(&x, &targets)? - minus.mse(&x, &targets)?) / (2.0 * step);
            worst = worst.max(relative_error(analytic[ti][i], numeric));
        }
        out.push(TensorCheck {
            subject: kind.to_string(),
            tensor: name,
            entries: analytic[ti].len(),
            max_relative_error: worst,
        });
    }
    Ok(out)
}

/// Worst relative error per (layer kind, tensor) over `instances` random
/// 3×4 layer instances (batch 3, four inputs, three outputs).
pub fn layer_suite(instances: usize, seed: u64, step: f64) -> Result<Vec<TensorCheck>> {
    let mut merged: Vec<TensorCheck> = Vec::new();
    for kind in LayerKind::ALL {
        for i in 0..instances {
            let checks = check_layer(kind, 3, 4, 3, derive_seed(seed, i as u64), step)?;
            for c in checks {
                match merged.iter_mut().find(|m| m.subject == c.subject && m.tensor == c.tensor) {
                    Some(m) => {
                        m.entries += c.entries;
                        m.max_relative_error = m.max_relative_error.max(c.max_relative_error);
                    }
                    None => merged.push(c),
                }
            }
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }

    #[test]
    fn every_layer_passes() {
        for c in layer_suite(3, 17, DEFAULT_STEP).unwrap() {
            assert!(c.passes(DEFAULT_TOLERANCE), "{c:?}");
        }
    }

    #[test]
    fn every_model_passes() {
        for kind in ModelKind::ALL {
            // nested exp makes the third derivative large; O(h²) truncation
            // at h = 1e-5 reaches 2e-5 for nac-mul, so use a smaller step
            for c in check_model(kind, 5, 6, 2, 23, 1e-6).unwrap() {
                assert!(c.passes(DEFAULT_TOLERANCE), "{c:?}");
            }
        }
    }
}

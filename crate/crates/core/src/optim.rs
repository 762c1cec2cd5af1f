use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.beta1 > 0.0
            && self.beta2 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam constants {self:?}")))
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(tensors: impl IntoIterator<Item = &'a Matrix2D>) -> Self {
        let sizes: Vec<usize> = tensors.into_iter().map(|t| t.data().len()).collect();
        Self {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step(params: Vec<&mut Matrix2D>, grads: Vec<&Matrix2D>, state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension {
            context: "adam_step (tensor count)",
            expected: state.m.len(),
            got: params.len().min(grads.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);

    for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if p.data().len() != g.data().len() || m.len() != g.data().len() {
            return Err(Error::Dimension {
                context: "adam_step (tensor size)",
                expected: m.len(),
                got: g.data().len(),
            });
        }
        for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = config.beta1 * *mi + (1.0 - config.beta1) * gr;
            *vi = config.beta2 * *vi + (1.0 - config.beta2) * gr * gr;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *w -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

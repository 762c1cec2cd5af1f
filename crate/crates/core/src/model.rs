//! Two-layer models built from the arithmetic layers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{backward_layer, backward_params_only, forward_layer, init_params, LayerCache, LayerKind, LayerParams};
use crate::matrix::Matrix2D;
use crate::rng::Rng;

pub const DEFAULT_HIDDEN_SIZE: usize = 2;

/// The benchmarked model families; each fixes the kinds of its two layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// NAC+ followed by NAC•.
    NacMul,
    /// NAC+ followed by NAC+.
    NacAdd,
    Nalu,
    Linear,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::NacMul, ModelKind::NacAdd, ModelKind::Nalu, ModelKind::Linear];

    pub fn layer_kinds(self) -> (LayerKind, LayerKind) {
        match self {
            ModelKind::NacMul => (LayerKind::NacAdd, LayerKind::NacMul),
            ModelKind::NacAdd => (LayerKind::NacAdd, LayerKind::NacAdd),
            ModelKind::Nalu => (LayerKind::Nalu, LayerKind::Nalu),
            ModelKind::Linear => (LayerKind::Linear, LayerKind::Linear),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::NacMul => "nac-mul",
            ModelKind::NacAdd => "nac-add",
            ModelKind::Nalu => "nalu",
            ModelKind::Linear => "linear",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown model kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub layer1: LayerParams,
    pub layer2: LayerParams,
    pub hidden_size: usize,
    pub eps_layer: f64,
}

/// Parameter gradients, shaped like the corresponding [`ModelParams`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layer1: LayerParams,
    pub layer2: LayerParams,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&Matrix2D> {
        let mut v = self.layer1.tensors();
        v.extend(self.layer2.tensors());
        v
    }
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    hidden: Matrix2D,
    layer1: LayerCache,
    layer2: LayerCache,
}

impl ModelCache {
    pub fn layer1(&self) -> &LayerCache {
        &self.layer1
    }

    pub fn layer2(&self) -> &LayerCache {
        &self.layer2
    }
}

impl ModelParams {
    pub fn init(kind: ModelKind, in_dim: usize, hidden_size: usize, eps_layer: f64, rng: &mut Rng) -> Result<Self> {
        let (k1, k2) = kind.layer_kinds();
        let layer1 = init_params(k1, in_dim, hidden_size, rng)?;
        let layer2 = init_params(k2, hidden_size, 1, rng)?;
        Self::from_layers(kind, layer1, layer2, eps_layer)
    }

    pub fn from_layers(kind: ModelKind, layer1: LayerParams, layer2: LayerParams, eps_layer: f64) -> Result<Self> {
        let (k1, k2) = kind.layer_kinds();
        if layer1.kind() != k1 || layer2.kind() != k2 {
            return Err(Error::Argument(format!(
                "{kind} expects layers ({k1:?}, {k2:?}), got ({:?}, {:?})",
                layer1.kind(),
                layer2.kind()
            )));
        }
        if layer2.in_dim() != layer1.out_dim() {
            return Err(Error::Dimension {
                context: "ModelParams::from_layers",
                expected: layer1.out_dim(),
                got: layer2.in_dim(),
            });
        }
        if layer2.out_dim() != 1 {
            return Err(Error::Dimension {
                context: "ModelParams::from_layers (output)",
                expected: 1,
                got: layer2.out_dim(),
            });
        }
        Ok(Self {
            kind,
            hidden_size: layer1.out_dim(),
            layer1,
            layer2,
            eps_layer,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layer1.in_dim()
    }

    pub fn forward(&self, x: &Matrix2D) -> Result<(Matrix2D, ModelCache)> {
        let (h, layer1) = forward_layer(&self.layer1, x, self.eps_layer)?;
        let (z, layer2) = forward_layer(&self.layer2, &h, self.eps_layer)?;
        Ok((z, ModelCache { hidden: h, layer1, layer2 }))
    }

    /// Predictions as a flat vector (one per batch row).
    pub fn predict(&self, x: &Matrix2D) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0.into_vec())
    }

    /// Backpropagates `∂L/∂z` through a forward pass of `x` that produced `cache`.
    pub fn backward_cached(&self, x: &Matrix2D, cache: &ModelCache, dl_dz: &Matrix2D) -> Result<Gradients> {
        let (g2, dh) = backward_layer(&self.layer2, &cache.hidden, &cache.layer2, dl_dz, self.eps_layer)?;
        let g1 = backward_params_only(&self.layer1, x, &cache.layer1, &dh, self.eps_layer)?;
        Ok(Gradients { layer1: g1, layer2: g2 })
    }

    /// Recomputes the forward pass on `x` and backpropagates `∂L/∂z`.
    pub fn backward(&self, x: &Matrix2D, dl_dz: &Matrix2D) -> Result<Gradients> {
        let (_, cache) = self.forward(x)?;
        self.backward_cached(x, &cache, dl_dz)
    }

    /// Mean squared error against `targets` and its gradient.
    pub fn mse_and_gradients(&self, x: &Matrix2D, targets: &[f64]) -> Result<(f64, Gradients)> {
        if targets.len() != x.rows() {
            return Err(Error::Dimension {
                context: "mse_and_gradients",
                expected: x.rows(),
                got: targets.len(),
            });
        }
        let (z, cache) = self.forward(x)?;
        let n = targets.len() as f64;
        let mut loss = 0.0;
        let mut dz = Vec::with_capacity(targets.len());
        for (&pred, &t) in z.data().iter().zip(targets) {
            let r = pred - t;
            loss += r * r;
            dz.push(2.0 * r / n);
        }
        let dz = Matrix2D::from_vec(targets.len(), 1, dz)?;
        Ok((loss / n, self.backward_cached(x, &cache, &dz)?))
    }

    pub fn mse(&self, x: &Matrix2D, targets: &[f64]) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.len() != targets.len() {
            return Err(Error::Dimension {
                context: "mse",
                expected: pred.len(),
                got: targets.len(),
            });
        }
        Ok(mse(&pred, targets))
    }

    pub fn tensors(&self) -> Vec<&Matrix2D> {
        let mut v = self.layer1.tensors();
        v.extend(self.layer2.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix2D> {
        let mut v = self.layer1.tensors_mut();
        v.extend(self.layer2.tensors_mut());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.layer1.is_finite() && self.layer2.is_finite()
    }

    /// All weights that define the learned arithmetic, both layers.
    pub fn effective_weights(&self) -> Vec<Matrix2D> {
        let mut v = self.layer1.effective_weights();
        v.extend(self.layer2.effective_weights());
        v
    }
}

pub fn mse(pred: &[f64], targets: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::DEFAULT_LAYER_EPS;
    use crate::rng::seeded;

    #[test]
    fn layer_kinds_follow_model_table() {
        assert_eq!(ModelKind::NacMul.layer_kinds(), (LayerKind::NacAdd, LayerKind::NacMul));
        assert_eq!(ModelKind::NacAdd.layer_kinds(), (LayerKind::NacAdd, LayerKind::NacAdd));
        assert_eq!(ModelKind::Nalu.layer_kinds(), (LayerKind::Nalu, LayerKind::Nalu));
        assert_eq!(ModelKind::Linear.layer_kinds(), (LayerKind::Linear, LayerKind::Linear));
    }

    #[test]
    fn shapes_and_names() {
        for kind in ModelKind::ALL {
            let m = ModelParams::init(kind, 100, 2, DEFAULT_LAYER_EPS, &mut seeded(0)).unwrap();
            assert_eq!(m.layer1.in_dim(), 100);
            assert_eq!(m.layer1.out_dim(), 2);
            assert_eq!(m.layer2.out_dim(), 1);
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("nac".parse::<ModelKind>().is_err());
    }

    #[test]
    fn mismatched_layers_rejected() {
        let mut rng = seeded(0);
        let l1 = init_params(LayerKind::Linear, 4, 2, &mut rng).unwrap();
        let l2 = init_params(LayerKind::NacAdd, 2, 1, &mut rng).unwrap();
        assert!(ModelParams::from_layers(ModelKind::Linear, l1, l2, 1e-7).is_err());
    }

    #[test]
    fn one_small_step_descends() {
        let mut rng = seeded(4);
        for kind in ModelKind::ALL {
            let mut m = ModelParams::init(kind, 6, 2, DEFAULT_LAYER_EPS, &mut rng).unwrap();
            let x = Matrix2D::from_fn(8, 6, |r, c| 1.0 + ((r * 7 + c * 3) % 5) as f64 * 0.2);
            let t: Vec<f64> = (0..8).map(|r| x.get(r, 0) + x.get(r, 1)).collect();
            let (before, g) = m.mse_and_gradients(&x, &t).unwrap();
            let grads: Vec<Vec<f64>> = g.tensors().iter().map(|t| t.data().to_vec()).collect();
            for (p, gr) in m.tensors_mut().into_iter().zip(&grads) {
                for (v, d) in p.data_mut().iter_mut().zip(gr) {
                    *v -= 1e-4 * d;
                }
            }
            let after = m.mse(&x, &t).unwrap();
            assert!(after < before, "{kind}: {after} >= {before}");
        }
    }
}

//! Dense arithmetic layers: Linear, NAC+, NAC• and NALU.
//!
//! Every layer maps a batch-major input `batch × in` to `batch × out`.
//! Weights are stored `out × in`. Forward passes return a cache holding
//! the intermediates that the hand-derived backward pass needs.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix2D};
use crate::rng::Rng;

/// Stabilizer inside `log(|x| + eps)` for the multiplicative unit.
pub const DEFAULT_LAYER_EPS: f64 = 1e-7;

/// Upper bound on the init range of `Ŵ` and `M̂`, keeping tanh and the
/// sigmoid in their active region for small fan-in.
const NAC_INIT_CAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Linear,
    NacAdd,
    NacMul,
    Nalu,
}

impl LayerKind {
    pub const ALL: [LayerKind; 4] = [
        LayerKind::Linear,
        LayerKind::NacAdd,
        LayerKind::NacMul,
        LayerKind::Nalu,
    ];
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `sign(x)` with `sign(0) = 0`.
#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weight pair `(Ŵ, M̂)` of a neural accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NacParams {
    pub w_hat: Matrix2D,
    pub m_hat: Matrix2D,
}

impl NacParams {
    pub fn new(w_hat: Matrix2D, m_hat: Matrix2D) -> Result<Self> {
        m_hat.ensure_shape("NacParams::new", w_hat.rows(), w_hat.cols())?;
        Ok(Self { w_hat, m_hat })
    }

    pub fn out_dim(&self) -> usize {
        self.w_hat.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w_hat.cols()
    }

    /// `tanh(Ŵ) ⊙ σ(M̂)`; every entry lies in `(-1, 1)`.
    pub fn effective_weight(&self) -> Matrix2D {
        let data = self
            .w_hat
            .data()
            .iter()
            .zip(self.m_hat.data())
            .map(|(&w, &m)| w.tanh() * sigmoid(m))
            .collect();
        Matrix2D::from_vec(self.out_dim(), self.in_dim(), data).expect("shape preserved")
    }

    /// Chain rule from `∂L/∂W` to `(∂L/∂Ŵ, ∂L/∂M̂)`.
    fn weight_grads(&self, d_w: &Matrix2D) -> NacParams {
        let n = d_w.data().len();
        let mut d_w_hat = Vec::with_capacity(n);
        let mut d_m_hat = Vec::with_capacity(n);
        for ((&g, &w), &m) in d_w.data().iter().zip(self.w_hat.data()).zip(self.m_hat.data()) {
            let t = w.tanh();
            let s = sigmoid(m);
            d_w_hat.push(g * (1.0 - t * t) * s);
            d_m_hat.push(g * t * s * (1.0 - s));
        }
        let (r, c) = d_w.shape();
        NacParams {
            w_hat: Matrix2D::from_vec(r, c, d_w_hat).expect("shape preserved"),
            m_hat: Matrix2D::from_vec(r, c, d_m_hat).expect("shape preserved"),
        }
    }
}

pub fn effective_weight(p: &NacParams) -> Matrix2D {
    p.effective_weight()
}

/// Parameters of a NALU: separate additive and multiplicative sub-units plus
/// the gate matrix `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaluParams {
    pub add_unit: NacParams,
    pub mul_unit: NacParams,
    pub gate: Matrix2D,
}

impl NaluParams {
    pub fn new(add_unit: NacParams, mul_unit: NacParams, gate: Matrix2D) -> Result<Self> {
        let (r, c) = add_unit.w_hat.shape();
        mul_unit.w_hat.ensure_shape("NaluParams::new (mul unit)", r, c)?;
        gate.ensure_shape("NaluParams::new (gate)", r, c)?;
        Ok(Self {
            add_unit,
            mul_unit,
            gate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerParams {
    Linear { weight: Matrix2D },
    NacAdd(NacParams),
    NacMul(NacParams),
    Nalu(NaluParams),
}

impl LayerParams {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerParams::Linear { .. } => LayerKind::Linear,
            LayerParams::NacAdd(_) => LayerKind::NacAdd,
            LayerParams::NacMul(_) => LayerKind::NacMul,
            LayerParams::Nalu(_) => LayerKind::Nalu,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            LayerParams::Linear { weight } => weight.cols(),
            LayerParams::NacAdd(p) | LayerParams::NacMul(p) => p.in_dim(),
            LayerParams::Nalu(p) => p.add_unit.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LayerParams::Linear { weight } => weight.rows(),
            LayerParams::NacAdd(p) | LayerParams::NacMul(p) => p.out_dim(),
            LayerParams::Nalu(p) => p.add_unit.out_dim(),
        }
    }

    /// Parameter tensors in a fixed order shared with [`LayerParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&Matrix2D> {
        match self {
            LayerParams::Linear { weight } => vec![weight],
            LayerParams::NacAdd(p) | LayerParams::NacMul(p) => vec![&p.w_hat, &p.m_hat],
            LayerParams::Nalu(p) => vec![
                &p.add_unit.w_hat,
                &p.add_unit.m_hat,
                &p.mul_unit.w_hat,
                &p.mul_unit.m_hat,
                &p.gate,
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix2D> {
        match self {
            LayerParams::Linear { weight } => vec![weight],
            LayerParams::NacAdd(p) | LayerParams::NacMul(p) => vec![&mut p.w_hat, &mut p.m_hat],
            LayerParams::Nalu(p) => vec![
                &mut p.add_unit.w_hat,
                &mut p.add_unit.m_hat,
                &mut p.mul_unit.w_hat,
                &mut p.mul_unit.m_hat,
                &mut p.gate,
            ],
        }
    }

    pub fn tensor_names(&self) -> &'static [&'static str] {
        match self {
            LayerParams::Linear { .. } => &["weight"],
            LayerParams::NacAdd(_) | LayerParams::NacMul(_) => &["w_hat", "m_hat"],
            LayerParams::Nalu(_) => &["add.w_hat", "add.m_hat", "mul.w_hat", "mul.m_hat", "gate"],
        }
    }

    /// The weights that define the arithmetic the layer performs: raw weights
    /// for Linear, `tanh(Ŵ)⊙σ(M̂)` for each accumulator. Gate weights are
    /// excluded.
    pub fn effective_weights(&self) -> Vec<Matrix2D> {
        match self {
            LayerParams::Linear { weight } => vec![weight.clone()],
            LayerParams::NacAdd(p) | LayerParams::NacMul(p) => vec![p.effective_weight()],
            LayerParams::Nalu(p) => vec![p.add_unit.effective_weight(), p.mul_unit.effective_weight()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Same-shaped zero tensors, used as gradient and optimizer-state storage.
    pub fn zeros_like(&self) -> LayerParams {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        out
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(in_dim: usize, out_dim: usize) -> f64 {
    (6.0 / (in_dim + out_dim) as f64).sqrt()
}

/// Symmetric bound used for `Ŵ` and `M̂`.
pub fn nac_init_bound(in_dim: usize, out_dim: usize) -> f64 {
    glorot_bound(in_dim, out_dim).min(NAC_INIT_CAP)
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Matrix2D {
    Matrix2D::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

fn init_nac(in_dim: usize, out_dim: usize, rng: &mut Rng) -> NacParams {
    let r = nac_init_bound(in_dim, out_dim);
    NacParams {
        w_hat: uniform_matrix(out_dim, in_dim, r, rng),
        m_hat: uniform_matrix(out_dim, in_dim, r, rng),
    }
}

/// Draws fresh parameters for a layer. Deterministic given the generator state.
pub fn init_params(kind: LayerKind, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<LayerParams> {
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::Argument(format!(
            "layer dimensions must be positive, got {in_dim} -> {out_dim}"
        )));
    }
    Ok(match kind {
        LayerKind::Linear => LayerParams::Linear {
            weight: uniform_matrix(out_dim, in_dim, glorot_bound(in_dim, out_dim), rng),
        },
        LayerKind::NacAdd => LayerParams::NacAdd(init_nac(in_dim, out_dim, rng)),
        LayerKind::NacMul => LayerParams::NacMul(init_nac(in_dim, out_dim, rng)),
        LayerKind::Nalu => {
            let add_unit = init_nac(in_dim, out_dim, rng);
            let mul_unit = init_nac(in_dim, out_dim, rng);
            let gate = uniform_matrix(out_dim, in_dim, glorot_bound(in_dim, out_dim), rng);
            LayerParams::Nalu(NaluParams {
                add_unit,
                mul_unit,
                gate,
            })
        }
    })
}

fn check_input(x: &Matrix2D, in_dim: usize, context: &'static str) -> Result<()> {
    if x.cols() != in_dim {
        return Err(Error::Dimension {
            context,
            expected: in_dim,
            got: x.cols(),
        });
    }
    Ok(())
}

fn log_abs(x: &Matrix2D, eps: f64) -> Matrix2D {
    x.map(|v| (v.abs() + eps).ln())
}

pub fn forward_nac_add(p: &NacParams, x: &Matrix2D) -> Result<Matrix2D> {
    check_input(x, p.in_dim(), "forward_nac_add")?;
    x.matmul_transposed(&p.effective_weight())
}

pub fn forward_nac_mul(p: &NacParams, x: &Matrix2D, eps: f64) -> Result<Matrix2D> {
    check_input(x, p.in_dim(), "forward_nac_mul")?;
    Ok(log_abs(x, eps).matmul_transposed(&p.effective_weight())?.map(f64::exp))
}

pub fn forward_nalu(p: &NaluParams, x: &Matrix2D, eps: f64) -> Result<Matrix2D> {
    Ok(forward_layer(&LayerParams::Nalu(p.clone()), x, eps)?.0)
}

/// Intermediates kept from a forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    inner: CacheInner,
}

#[derive(Debug, Clone)]
enum CacheInner {
    Linear,
    NacAdd {
        w: Matrix2D,
    },
    NacMul {
        w: Matrix2D,
        log_in: Matrix2D,
        out: Matrix2D,
    },
    Nalu {
        w_add: Matrix2D,
        add_out: Matrix2D,
        w_mul: Matrix2D,
        log_in: Matrix2D,
        mul_out: Matrix2D,
        gate: Matrix2D,
    },
}

impl LayerCache {
    /// Gate activations `σ(x·Gᵀ)` for a NALU layer.
    pub fn gate_values(&self) -> Option<&Matrix2D> {
        match &self.inner {
            CacheInner::Nalu { gate, .. } => Some(gate),
            _ => None,
        }
    }
}

pub fn forward_layer(p: &LayerParams, x: &Matrix2D, eps: f64) -> Result<(Matrix2D, LayerCache)> {
    check_input(x, p.in_dim(), "forward_layer")?;
    let (out, inner) = match p {
        LayerParams::Linear { weight } => (x.matmul_transposed(weight)?, CacheInner::Linear),
        LayerParams::NacAdd(nac) => {
            let w = nac.effective_weight();
            (x.matmul_transposed(&w)?, CacheInner::NacAdd { w })
        }
        LayerParams::NacMul(nac) => {
            let w = nac.effective_weight();
            let log_in = log_abs(x, eps);
            let out = log_in.matmul_transposed(&w)?.map(f64::exp);
            (out.clone(), CacheInner::NacMul { w, log_in, out })
        }
        LayerParams::Nalu(nalu) => {
            let w_add = nalu.add_unit.effective_weight();
            let w_mul = nalu.mul_unit.effective_weight();
            let add_out = x.matmul_transposed(&w_add)?;
            let log_in = log_abs(x, eps);
            let mul_out = log_in.matmul_transposed(&w_mul)?.map(f64::exp);
            let gate = x.matmul_transposed(&nalu.gate)?.map(sigmoid);
            let data = gate
                .data()
                .iter()
                .zip(add_out.data())
                .zip(mul_out.data())
                .map(|((&g, &a), &m)| g * a + (1.0 - g) * m)
                .collect();
            let out = Matrix2D::from_vec(x.rows(), nalu.add_unit.out_dim(), data)?;
            (
                out,
                CacheInner::Nalu {
                    w_add,
                    add_out,
                    w_mul,
                    log_in,
                    mul_out,
                    gate,
                },
            )
        }
    };
    Ok((out, LayerCache { inner }))
}

/// `dzᵀ · x`: gradient of `z = x·Wᵀ` with respect to `W`.
fn outer_grad(dz: &Matrix2D, x: &Matrix2D) -> Matrix2D {
    let mut g = Matrix2D::zeros(dz.cols(), x.cols());
    for b in 0..dz.rows() {
        let xr = x.row(b);
        for (o, &d) in dz.row(b).iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (slot, &xv) in g.row_mut(o).iter_mut().zip(xr) {
                *slot += d * xv;
            }
        }
    }
    g
}

/// `dz · W`: gradient of `z = x·Wᵀ` with respect to `x`, accumulated into `dx`.
fn accumulate_input_grad(dz: &Matrix2D, w: &Matrix2D, dx: Option<&mut Matrix2D>) {
    let Some(dx) = dx else { return };
    for b in 0..dz.rows() {
        let dzr = dz.row(b).to_vec();
        let dst = dx.row_mut(b);
        for (o, d) in dzr.into_iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (slot, &wv) in dst.iter_mut().zip(w.row(o)) {
                *slot += d * wv;
            }
        }
    }
}

/// Backward pass through the multiplicative path `exp(log(|x|+ε)·Wᵀ)`.
/// Returns `∂L/∂W` and accumulates `∂L/∂x` into `dx`.
fn nac_mul_backward(
    d_out: &Matrix2D,
    out: &Matrix2D,
    w: &Matrix2D,
    log_in: &Matrix2D,
    input: &Matrix2D,
    eps: f64,
    dx: Option<&mut Matrix2D>,
) -> Matrix2D {
    let d_pre = Matrix2D::from_vec(
        d_out.rows(),
        d_out.cols(),
        d_out.data().iter().zip(out.data()).map(|(d, z)| d * z).collect(),
    )
    .expect("shape preserved");
    let d_w = outer_grad(&d_pre, log_in);
    let Some(dx) = dx else { return d_w };
    let mut d_log = Matrix2D::zeros(input.rows(), input.cols());
    accumulate_input_grad(&d_pre, w, Some(&mut d_log));
    for ((slot, &dl), &xv) in dx.data_mut().iter_mut().zip(d_log.data()).zip(input.data()) {
        *slot += dl * sign(xv) / (xv.abs() + eps);
    }
    d_w
}

/// Backward pass for a single layer given the forward input `x`, its cache
/// and `∂L/∂z`. Returns parameter gradients (shaped like the parameters) and
/// `∂L/∂x`.
pub fn backward_layer(
    p: &LayerParams,
    x: &Matrix2D,
    cache: &LayerCache,
    dz: &Matrix2D,
    eps: f64,
) -> Result<(LayerParams, Matrix2D)> {
    let (grads, dx) = backward_impl(p, x, cache, dz, eps, true)?;
    Ok((grads, dx.expect("requested")))
}

/// Like [`backward_layer`] but skips `∂L/∂x`, which the first layer of a
/// model never needs.
pub(crate) fn backward_params_only(
    p: &LayerParams,
    x: &Matrix2D,
    cache: &LayerCache,
    dz: &Matrix2D,
    eps: f64,
) -> Result<LayerParams> {
    Ok(backward_impl(p, x, cache, dz, eps, false)?.0)
}

fn backward_impl(
    p: &LayerParams,
    x: &Matrix2D,
    cache: &LayerCache,
    dz: &Matrix2D,
    eps: f64,
    input_grad: bool,
) -> Result<(LayerParams, Option<Matrix2D>)> {
    check_input(x, p.in_dim(), "backward_layer")?;
    dz.ensure_shape("backward_layer", x.rows(), p.out_dim())?;
    let mut dx = input_grad.then(|| Matrix2D::zeros(x.rows(), x.cols()));
    let grads = match (p, &cache.inner) {
        (LayerParams::Linear { weight }, CacheInner::Linear) => {
            accumulate_input_grad(dz, weight, dx.as_mut());
            LayerParams::Linear {
                weight: outer_grad(dz, x),
            }
        }
        (LayerParams::NacAdd(nac), CacheInner::NacAdd { w }) => {
            accumulate_input_grad(dz, w, dx.as_mut());
            LayerParams::NacAdd(nac.weight_grads(&outer_grad(dz, x)))
        }
        (LayerParams::NacMul(nac), CacheInner::NacMul { w, log_in, out }) => {
            let d_w = nac_mul_backward(dz, out, w, log_in, x, eps, dx.as_mut());
            LayerParams::NacMul(nac.weight_grads(&d_w))
        }
        (
            LayerParams::Nalu(nalu),
            CacheInner::Nalu {
                w_add,
                add_out,
                w_mul,
                log_in,
                mul_out,
                gate,
            },
        ) => {
            let n = dz.data().len();
            let mut d_add = Vec::with_capacity(n);
            let mut d_mul = Vec::with_capacity(n);
            let mut d_gate_pre = Vec::with_capacity(n);
            for i in 0..n {
                let d = dz.data()[i];
                let g = gate.data()[i];
                d_add.push(d * g);
                d_mul.push(d * (1.0 - g));
                d_gate_pre.push(d * (add_out.data()[i] - mul_out.data()[i]) * g * (1.0 - g));
            }
            let (r, c) = dz.shape();
            let d_add = Matrix2D::from_vec(r, c, d_add)?;
            let d_mul = Matrix2D::from_vec(r, c, d_mul)?;
            let d_gate_pre = Matrix2D::from_vec(r, c, d_gate_pre)?;

            accumulate_input_grad(&d_add, w_add, dx.as_mut());
            let d_w_add = outer_grad(&d_add, x);
            let d_w_mul = nac_mul_backward(&d_mul, mul_out, w_mul, log_in, x, eps, dx.as_mut());
            accumulate_input_grad(&d_gate_pre, &nalu.gate, dx.as_mut());
            LayerParams::Nalu(NaluParams {
                add_unit: nalu.add_unit.weight_grads(&d_w_add),
                mul_unit: nalu.mul_unit.weight_grads(&d_w_mul),
                gate: outer_grad(&d_gate_pre, x),
            })
        }
        _ => {
            return Err(Error::Argument(format!(
                "forward cache does not belong to a {:?} layer",
                p.kind()
            )))
        }
    };
    Ok((grads, dx))
}

/// Scalar re-evaluation of one NALU output; used by tests and the gradient
/// checker as an implementation-independent reference.
pub fn nalu_scalar(p: &NaluParams, x: &[f64], out: usize, eps: f64) -> f64 {
    let w_add: Vec<f64> = (0..x.len())
        .map(|j| p.add_unit.w_hat.get(out, j).tanh() * sigmoid(p.add_unit.m_hat.get(out, j)))
        .collect();
    let w_mul: Vec<f64> = (0..x.len())
        .map(|j| p.mul_unit.w_hat.get(out, j).tanh() * sigmoid(p.mul_unit.m_hat.get(out, j)))
        .collect();
    let a = dot(&w_add, x);
    let logs: Vec<f64> = x.iter().map(|v| (v.abs() + eps).ln()).collect();
    let m = dot(&w_mul, &logs).exp();
    let g = sigmoid(dot(p.gate.row(out), x));
    g * a + (1.0 - g) * m
}

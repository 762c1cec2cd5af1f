//! Profile-likelihood intervals for the mean of a gamma and of a beta scaled
//! to `[0, 0.5]`.
//!
//! Both searches bisect outward from the maximum-likelihood mean on a
//! transformed scale (log for the gamma mean, logit for the beta mean) until
//! the deviance `2 (ℓ̂ - ℓ_p)` crosses the χ²₁ quantile. The nuisance
//! parameter is re-maximized at every evaluation by a Newton iteration kept
//! inside a bracket.

use serde::{Deserialize, Serialize};

use super::check_confidence;
use super::special::{chi2_1_quantile, digamma, ln_gamma, trigamma};
use crate::error::{Error, Result};

/// Support bound of the scaled beta.
pub const BETA_UPPER: f64 = 0.5;
/// Observations at exactly 0 or 0.5 are moved inward by this much.
pub const BETA_CLAMP: f64 = 1e-9;

/// Relative tolerance on the interval end points.
const BISECT_TOL: f64 = 1e-10;
/// How far (on the transformed scale) the outward bracket search may go.
const MAX_REACH: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSummary {
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
}

pub type GammaMeanSummary = MeanSummary;
pub type BetaMeanSummary = MeanSummary;

fn check_samples(samples: &[f64], what: &str) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::Inference(format!("{what}: need at least 2 samples, got {}", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Inference(format!("{what}: non-finite sample")));
    }
    Ok(())
}

/// Solves `f(u) = 0` for a decreasing `f` given its derivative, starting
/// from `u0`. Newton steps that leave the current bracket fall back to
/// bisection.
fn solve_decreasing(f: impl Fn(f64) -> (f64, f64), u0: f64) -> Result<f64> {
    let (mut lo, mut hi) = (u0, u0);
    let mut step = 1.0;
    while f(lo).0 < 0.0 {
        lo -= step;
        step *= 2.0;
        if step > 1e4 {
            return Err(Error::Inference("root bracket not found (lower)".into()));
        }
    }
    step = 1.0;
    while f(hi).0 > 0.0 {
        hi += step;
        step *= 2.0;
        if step > 1e4 {
            return Err(Error::Inference("root bracket not found (upper)".into()));
        }
    }
    let mut u = u0.clamp(lo, hi);
    for _ in 0..200 {
        let (v, d) = f(u);
        if v == 0.0 {
            return Ok(u);
        }
        if v > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let newton = u - v / d;
        let next = if d < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - u).abs() <= 1e-15 * u.abs().max(1.0) || hi - lo <= 1e-15 * u.abs().max(1.0) {
            return Ok(next);
        }
        u = next;
    }
    Ok(u)
}

/// Finds where `deviance` (zero at `t0`, increasing away from it) reaches
/// `target` on the side given by `dir`. Returns `None` if it never does
/// within reach, meaning the interval is open up to the support bound.
fn outward_crossing(deviance: impl Fn(f64) -> Result<f64>, t0: f64, dir: f64, target: f64) -> Result<Option<f64>> {
    let mut inner = t0;
    let mut step = 1e-3 * t0.abs().max(1.0);
    let mut outer;
    loop {
        outer = t0 + dir * step;
        if deviance(outer)? >= target {
            break;
        }
        inner = outer;
        step *= 2.0;
        if step > MAX_REACH {
            return Ok(None);
        }
    }
    while (outer - inner).abs() > BISECT_TOL * inner.abs().max(1.0) {
        let mid = 0.5 * (inner + outer);
        if deviance(mid)? >= target {
            outer = mid;
        } else {
            inner = mid;
        }
    }
    Ok(Some(0.5 * (inner + outer)))
}

/// `ln x - ψ(x)`, evaluated without cancellation for large `x`.
fn log_minus_digamma(x: f64) -> f64 {
    if x < 10.0 {
        return x.ln() - digamma(x);
    }
    let r = 1.0 / (x * x);
    0.5 / x + r * (1.0 / 12.0 - r * (1.0 / 120.0 - r * (1.0 / 252.0 - r * (1.0 / 240.0 - r / 132.0))))
}

/// `k ln k - k - ln Γ(k)`, via Stirling's series for large `k`.
fn stirling_part(k: f64) -> f64 {
    if k < 10.0 {
        return k * k.ln() - k - ln_gamma(k);
    }
    let r = 1.0 / (k * k);
    let corr = (1.0 / 12.0 - r * (1.0 / 360.0 - r * (1.0 / 1260.0 - r / 1680.0))) / k;
    0.5 * (k / (2.0 * std::f64::consts::PI)).ln() - corr
}

/// Gamma shape `k` solving `ln k - ψ(k) = c` for `c > 0`.
fn gamma_shape(c: f64) -> Result<f64> {
    // closed-form approximation as the starting point
    let k0 = (3.0 - c + ((c - 3.0).powi(2) + 24.0 * c).sqrt()) / (12.0 * c);
    let u = solve_decreasing(
        |u| {
            let k = u.exp();
            (log_minus_digamma(k) - c, k * (1.0 / k - trigamma(k)))
        },
        k0.ln(),
    )?;
    Ok(u.exp())
}

/// Profile log-likelihood (per observation, up to a constant) of a gamma
/// mean whose statistic `c(μ) = ln(μ/x̄) + x̄/μ - 1 + (ln x̄ - mean ln x)`.
fn gamma_profile(c: f64) -> Result<f64> {
    let k = gamma_shape(c)?;
    Ok(stirling_part(k) - k * c)
}

/// Maximum-likelihood mean of a gamma sample with a profile-likelihood
/// interval.
pub fn gamma_mean_profile_ci(samples: &[f64], confidence: f64) -> Result<GammaMeanSummary> {
    check_samples(samples, "gamma_mean_profile_ci")?;
    check_confidence(confidence)?;
    if samples.iter().any(|&v| v <= 0.0) {
        return Err(Error::Inference("gamma_mean_profile_ci: samples must be positive".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    // ln x̄ - mean ln x, computed from the relative deviations
    let c0 = -samples.iter().map(|&v| ((v - mean) / mean).ln_1p()).sum::<f64>() / n;
    if !(c0 > 0.0) {
        return Err(Error::Inference("gamma_mean_profile_ci: samples are all equal".into()));
    }
    let top = gamma_profile(c0)?;
    let target = chi2_1_quantile(confidence);
    // t = ln(μ / x̄)
    let deviance = |t: f64| -> Result<f64> {
        let h = t + (-t).exp_m1();
        Ok(2.0 * n * (top - gamma_profile(c0 + h)?))
    };
    let lo = outward_crossing(deviance, 0.0, -1.0, target)?;
    let hi = outward_crossing(deviance, 0.0, 1.0, target)?;
    Ok(MeanSummary {
        n: samples.len(),
        mean,
        ci_low: lo.map_or(0.0, |t| mean * t.exp()),
        ci_high: hi.map_or(f64::INFINITY, |t| mean * t.exp()),
        confidence,
    })
}

struct BetaStats {
    /// mean ln y
    a: f64,
    /// mean ln (1 - y)
    b: f64,
}

impl BetaStats {
    fn loglik(&self, alpha: f64, beta: f64) -> f64 {
        ln_gamma(alpha + beta) - ln_gamma(alpha) - ln_gamma(beta) + (alpha - 1.0) * self.a + (beta - 1.0) * self.b
    }

    /// Full maximum likelihood by Newton on `(ln α, ln β)`, started from the
    /// method of moments.
    fn fit(&self, ys: &[f64]) -> Result<(f64, f64)> {
        let n = ys.len() as f64;
        let m = ys.iter().sum::<f64>() / n;
        let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n;
        let common = if v > 0.0 { (m * (1.0 - m) / v - 1.0).max(1e-3) } else { 1.0 };
        let (mut la, mut lb) = ((m * common).ln(), ((1.0 - m) * common).ln());
        let mut current = self.loglik(la.exp(), lb.exp());
        for _ in 0..500 {
            let (al, be) = (la.exp(), lb.exp());
            let ps = digamma(al + be);
            let ts = trigamma(al + be);
            // gradient and Hessian in (ln α, ln β)
            let ga = al * (ps - digamma(al) + self.a);
            let gb = be * (ps - digamma(be) + self.b);
            let haa = al * al * (ts - trigamma(al)) + ga;
            let hbb = be * be * (ts - trigamma(be)) + gb;
            let hab = al * be * ts;
            let det = haa * hbb - hab * hab;
            let (mut da, mut db) = if haa < 0.0 && det > 0.0 {
                (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
            } else {
                (ga * 1e-2, gb * 1e-2)
            };
            let mut accepted = false;
            for _ in 0..60 {
                let cand = self.loglik((la + da).exp(), (lb + db).exp());
                if cand.is_finite() && cand >= current - 1e-15 * current.abs() {
                    la += da;
                    lb += db;
                    current = cand;
                    accepted = true;
                    break;
                }
                da *= 0.5;
                db *= 0.5;
            }
            if !accepted || (da.abs() < 1e-13 && db.abs() < 1e-13) {
                break;
            }
        }
        let (al, be) = (la.exp(), lb.exp());
        if !(al.is_finite() && be.is_finite()) {
            return Err(Error::Inference("beta fit did not converge".into()));
        }
        Ok((al, be))
    }

    /// Total concentration `φ = α + β` maximizing the likelihood with the
    /// mean fixed at `m`, and the resulting log-likelihood.
    fn profile(&self, m: f64, phi0: f64) -> Result<f64> {
        let q = 1.0 - m;
        let u = solve_decreasing(
            |u| {
                let phi = u.exp();
                let d = digamma(phi) - m * digamma(m * phi) - q * digamma(q * phi) + m * self.a + q * self.b;
                let dd = trigamma(phi) - m * m * trigamma(m * phi) - q * q * trigamma(q * phi);
                (d, phi * dd)
            },
            phi0.ln(),
        )?;
        let phi = u.exp();
        Ok(self.loglik(m * phi, q * phi))
    }
}

/// Maximum-likelihood mean of samples on `[0, 0.5]` under a beta scaled to
/// that support, with a profile-likelihood interval on the same scale.
pub fn beta_mean_profile_ci(samples: &[f64], confidence: f64) -> Result<BetaMeanSummary> {
    check_samples(samples, "beta_mean_profile_ci")?;
    check_confidence(confidence)?;
    if samples.iter().any(|&v| !(0.0..=BETA_UPPER).contains(&v)) {
        return Err(Error::Inference("beta_mean_profile_ci: samples must lie in [0, 0.5]".into()));
    }
    let ys: Vec<f64> = samples
        .iter()
        .map(|&v| v.clamp(BETA_CLAMP, BETA_UPPER - BETA_CLAMP) / BETA_UPPER)
        .collect();
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(Error::Inference("beta_mean_profile_ci: samples are all equal".into()));
    }
    let n = ys.len() as f64;
    let stats = BetaStats {
        a: ys.iter().map(|y| y.ln()).sum::<f64>() / n,
        b: ys.iter().map(|y| (-y).ln_1p()).sum::<f64>() / n,
    };
    let (alpha, beta) = stats.fit(&ys)?;
    let phi_hat = alpha + beta;
    let m_hat = alpha / phi_hat;
    let top = stats.loglik(alpha, beta);
    let target = chi2_1_quantile(confidence);
    let logit = |m: f64| (m / (1.0 - m)).ln();
    let expit = |t: f64| 1.0 / (1.0 + (-t).exp());
    let deviance = |t: f64| -> Result<f64> { Ok((2.0 * n * (top - stats.profile(expit(t), phi_hat)?)).max(0.0)) };
    let t0 = logit(m_hat);
    let lo = outward_crossing(deviance, t0, -1.0, target)?;
    let hi = outward_crossing(deviance, t0, 1.0, target)?;
    Ok(MeanSummary {
        n: samples.len(),
        mean: BETA_UPPER * m_hat,
        ci_low: lo.map_or(0.0, |t| BETA_UPPER * expit(t)),
        ci_high: hi.map_or(BETA_UPPER, |t| BETA_UPPER * expit(t)),
        confidence,
    })
}

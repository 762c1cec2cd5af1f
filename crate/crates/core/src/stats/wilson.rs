use serde::{Deserialize, Serialize};

use super::check_confidence;
use super::special::z_critical;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialSummary {
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
}

impl BinomialSummary {
    /// Offsets from the rate in whole percent, `(+upper, -lower)`, rounded
    /// half away from zero.
    pub fn percent_offsets(&self) -> (i64, i64) {
        let up = (100.0 * (self.ci_high - self.rate)).round() as i64;
        let down = (100.0 * (self.rate - self.ci_low)).round() as i64;
        (up, down)
    }
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, confidence: f64) -> Result<BinomialSummary> {
    if trials == 0 {
        return Err(Error::Argument("wilson_interval needs at least one trial".into()));
    }
    if successes > trials {
        return Err(Error::Argument(format!("{successes} successes out of {trials} trials")));
    }
    check_confidence(confidence)?;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = z_critical(confidence);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let ci_low = if successes == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let ci_high = if successes == trials { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok(BinomialSummary {
        successes,
        trials,
        rate: p,
        ci_low,
        ci_high,
        confidence,
    })
}

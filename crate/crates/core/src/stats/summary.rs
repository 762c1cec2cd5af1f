use serde::{Deserialize, Serialize};

use super::profile::{beta_mean_profile_ci, gamma_mean_profile_ci, MeanSummary};
use super::wilson::{wilson_interval, BinomialSummary};
use crate::error::{Error, Result};
use crate::trainer::TrialRecord;

/// What the summary needs from one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    pub solved_at: Option<u64>,
    pub sparsity_error: Option<f64>,
    /// The trial did not complete (it panicked or returned an error).
    pub errored: bool,
}

impl From<&TrialRecord> for Outcome {
    fn from(r: &TrialRecord) -> Self {
        Self {
            success: r.success,
            solved_at: r.solved_at,
            sparsity_error: r.sparsity_error,
            errored: false,
        }
    }
}

/// A mean with an interval when one can be estimated, or a point estimate
/// and the reason there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub n: usize,
    pub mean: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ColumnSummary {
    fn from_interval(s: MeanSummary) -> Self {
        Self {
            n: s.n,
            mean: s.mean,
            ci_low: Some(s.ci_low),
            ci_high: Some(s.ci_high),
            note: None,
        }
    }

    fn point(values: &[f64], note: String) -> Self {
        Self {
            n: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            ci_low: None,
            ci_high: None,
            note: Some(note),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub errored: usize,
    /// Over completed trials; absent when every trial errored.
    pub success_rate: Option<BinomialSummary>,
    /// Over successful trials; absent when there are none.
    pub solved_at: Option<ColumnSummary>,
    pub sparsity_error: Option<ColumnSummary>,
}

fn column(values: &[f64], fit: impl Fn(&[f64]) -> Result<MeanSummary>) -> Option<ColumnSummary> {
    match values.len() {
        0 => None,
        1 => Some(ColumnSummary::point(values, "single observation, no interval".into())),
        _ => Some(match fit(values) {
            Ok(s) => ColumnSummary::from_interval(s),
            Err(e) => ColumnSummary::point(values, e.to_string()),
        }),
    }
}

/// Table-1 style row: Wilson success rate over completed trials, then
/// solved-at (gamma) and sparsity error (scaled beta) over the successful
/// ones.
pub fn summarize(outcomes: &[Outcome], confidence: f64) -> Result<SummaryRow> {
    if outcomes.is_empty() {
        return Err(Error::Argument("summarize needs at least one record".into()));
    }
    let errored = outcomes.iter().filter(|o| o.errored).count();
    let done: Vec<&Outcome> = outcomes.iter().filter(|o| !o.errored).collect();
    let wins: Vec<&Outcome> = done.iter().copied().filter(|o| o.success).collect();
    let success_rate = if done.is_empty() {
        None
    } else {
        Some(wilson_interval(wins.len() as u64, done.len() as u64, confidence)?)
    };
    let solved: Vec<f64> = wins.iter().filter_map(|o| o.solved_at).map(|v| v as f64).collect();
    let sparsity: Vec<f64> = wins.iter().filter_map(|o| o.sparsity_error).collect();
    Ok(SummaryRow {
        trials: outcomes.len(),
        successes: wins.len(),
        failures: done.len() - wins.len(),
        errored,
        success_rate,
        solved_at: column(&solved, |v| gamma_mean_profile_ci(v, confidence)),
        sparsity_error: column(&sparsity, |v| beta_mean_profile_ci(v, confidence)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn win(at: u64, sparsity: f64) -> Outcome {
        Outcome {
            success: true,
            solved_at: Some(at),
            sparsity_error: Some(sparsity),
            errored: false,
        }
    }

    fn loss() -> Outcome {
        Outcome {
            success: false,
            solved_at: None,
            sparsity_error: None,
            errored: false,
        }
    }

    #[test]
    fn zero_successes_leave_columns_empty() {
        let row = summarize(&vec![loss(); 100], 0.95).unwrap();
        assert_eq!(row.success_rate.unwrap().percent_offsets(), (4, 0));
        assert!(row.solved_at.is_none() && row.sparsity_error.is_none());
    }

    #[test]
    fn single_success_is_a_point_estimate() {
        let mut v = vec![loss(); 9];
        v.push(win(5000, 0.1));
        let row = summarize(&v, 0.95).unwrap();
        let s = row.solved_at.unwrap();
        assert_eq!((s.n, s.mean, s.ci_low), (1, 5000.0, None));
        assert!(s.note.is_some());
        assert_eq!(row.sparsity_error.unwrap().mean, 0.1);
    }

    #[test]
    fn hand_computed_row() {
        let mut v: Vec<Outcome> = (0..31).map(|i| win(1000 * (i + 1), 0.01 * (1 + i % 5) as f64)).collect();
        v.extend(vec![loss(); 69]);
        let row = summarize(&v, 0.95).unwrap();
        assert_eq!((row.trials, row.successes, row.failures, row.errored), (100, 31, 69, 0));
        assert_eq!(row.success_rate.unwrap().percent_offsets(), (10, 8));
        let solved: Vec<f64> = (1..=31).map(|i| 1000.0 * i as f64).collect();
        let g = gamma_mean_profile_ci(&solved, 0.95).unwrap();
        let s = row.solved_at.unwrap();
        assert_eq!(s.mean, 16_000.0);
        assert_eq!((s.ci_low, s.ci_high), (Some(g.ci_low), Some(g.ci_high)));
        let sp = row.sparsity_error.unwrap();
        assert!(sp.ci_low.unwrap() < 0.03 && 0.03 < sp.ci_high.unwrap());
    }

    #[test]
    fn errored_trials_are_counted_but_not_rated() {
        let mut v = vec![win(100, 0.2), win(300, 0.3), loss()];
        v.push(Outcome { errored: true, ..loss() });
        let row = summarize(&v, 0.95).unwrap();
        assert_eq!(row.successes + row.failures + row.errored, row.trials);
        assert_eq!(row.success_rate.unwrap().trials, 3);
    }

    #[test]
    fn out_of_support_sparsity_falls_back_to_a_point() {
        let row = summarize(&[win(100, 0.7), win(200, 0.6)], 0.95).unwrap();
        let sp = row.sparsity_error.unwrap();
        assert!((sp.mean - 0.65).abs() < 1e-12 && sp.ci_low.is_none());
        let row = summarize(&[win(100, 0.1), win(100, 0.2)], 0.95).unwrap();
        assert!(row.solved_at.unwrap().note.is_some());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(summarize(&[], 0.95).is_err());
    }
}

//! Interval estimators for benchmark summaries: a Wilson interval for the
//! success rate, and profile-likelihood intervals for the mean of a gamma
//! (solved-at iteration) and of a beta scaled to `[0, 0.5]` (sparsity
//! error).

pub mod profile;
pub mod special;
pub mod summary;
pub mod wilson;

pub use profile::{beta_mean_profile_ci, gamma_mean_profile_ci, BetaMeanSummary, GammaMeanSummary, MeanSummary};
pub use summary::{summarize, ColumnSummary, Outcome, SummaryRow};
pub use wilson::{wilson_interval, BinomialSummary};

pub const DEFAULT_CONFIDENCE: f64 = 0.95;

pub(crate) fn check_confidence(confidence: f64) -> crate::Result<()> {
    if confidence > 0.0 && confidence < 1.0 {
        Ok(())
    } else {
        Err(crate::Error::Argument(format!("confidence {confidence} must be in (0, 1)")))
    }
}

//! Sweep orchestration: configuration, expansion into trials, parallel
//! execution into an append-only store, and aggregation.

pub mod aggregate;
pub mod config;
pub mod store;
pub mod sweep;

pub use aggregate::{aggregate, parse_keys, plot_series, render, AggregateRow, GroupKey, OutputFormat, PlotSeries};
pub use config::{Experiment, RangePair, Seeds, SweepConfig, ThresholdConfig};
pub use store::{read_records, ResultStore, StoredTrial, ThresholdCache};
pub use sweep::{expand_sweep, precompute_thresholds, run_sweep, Expansion, Rejected, RunOptions, RunReport, TrialDescriptor};

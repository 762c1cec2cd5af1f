use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use arith_bench::gradcheck::{check_model, layer_suite, DEFAULT_STEP, DEFAULT_TOLERANCE};
use arith_bench::harness::{
    aggregate, parse_keys, plot_series, precompute_thresholds, read_records, render, run_sweep, OutputFormat, RunOptions,
    SweepConfig,
};
use arith_bench::model::ModelKind;
use arith_bench::par::Parallelism;

#[derive(Parser)]
#[command(name = "arith-bench", version, about = "Arithmetic-unit extrapolation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a sweep config, appending records to the output directory.
    Run {
        config: PathBuf,
        #[arg(short, long, default_value_t = 1)]
        workers: usize,
        #[arg(short, long, default_value = "results")]
        out: PathBuf,
        /// Continue a partially completed store instead of refusing it.
        #[arg(long)]
        resume: bool,
        /// Stop after this many pending trials.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Summarize a store into success rate, solved-at and sparsity rows.
    Aggregate {
        /// Results directory or a trials.jsonl file.
        store: PathBuf,
        #[arg(short, long, default_value = "op,model")]
        group_by: String,
        #[arg(short, long, default_value = "markdown")]
        format: String,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// Emit plot series (JSON) along this numeric key instead of a table.
        #[arg(long)]
        plot_x: Option<String>,
    },
    /// Simulate and cache the success thresholds a config needs.
    Threshold {
        config: PathBuf,
        #[arg(short, long, default_value = "results")]
        out: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// Step for the whole-model checks, whose losses are steeper.
        #[arg(long, default_value_t = 1e-6)]
        model_step: f64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run { config, workers, out, resume, limit } => {
            let cfg = SweepConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let report = run_sweep(&cfg, &out, RunOptions { workers, resume, limit })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
        Command::Aggregate { store, group_by, format, confidence, plot_x } => {
            let records = read_records(&store)?;
            let mut keys = parse_keys(&group_by)?;
            if let Some(x) = &plot_x {
                let x = x.parse()?;
                if !keys.contains(&x) {
                    keys.push(x);
                }
                let rows = aggregate(&records, &keys, confidence)?;
                println!("{}", serde_json::to_string_pretty(&plot_series(&rows, x)?)?);
            } else {
                let format: OutputFormat = format.parse()?;
                let rows = aggregate(&records, &keys, confidence)?;
                print!("{}", render(&rows, format)?);
            }
            Ok(true)
        }
        Command::Threshold { config, out } => {
            let cfg = SweepConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let mode = if Parallelism::available() { Parallelism::Parallel } else { Parallelism::Sequential };
            for t in precompute_thresholds(&cfg, &out, mode)? {
                println!("{}", serde_json::to_string(&t)?);
            }
            Ok(true)
        }
        Command::Gradcheck { instances, seed, step, model_step, tolerance } => {
            if instances == 0 {
                bail!("instances must be positive");
            }
            let mut ok = true;
            let mut checks = layer_suite(instances, seed, step)?;
            for kind in ModelKind::ALL {
                checks.extend(check_model(kind, 3, 4, 2, seed, model_step)?);
            }
            for c in &checks {
                let pass = c.passes(tolerance);
                ok &= pass;
                println!(
                    "{:<8} {:<12} {:<10} entries={:<5} max_rel_err={:.3e}",
                    if pass { "ok" } else { "FAIL" },
                    c.subject,
                    c.tensor,
                    c.entries,
                    c.max_relative_error
                );
            }
            Ok(ok)
        }
    }
}

//! Acceptance run: one line per criterion, then a non-zero exit if any
//! criterion does not have its expected outcome.
//!
//! Criteria listed in `KNOWN_FAILURES` are evaluated at full strength and
//! reported as FAIL; the run only breaks if such a criterion starts passing
//! (so the list gets updated) or any other criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::SeedableRng;
use rand_distr::{Beta, Distribution, Gamma, Uniform};

use arith_bench::dataset::{DatasetSpec, Operation, Split};
use arith_bench::gradcheck::layer_suite;
use arith_bench::harness::{aggregate, parse_keys, read_records, render, run_sweep, OutputFormat, RunOptions, SweepConfig};
use arith_bench::layers::{LayerParams, NacParams, NaluParams};
use arith_bench::metrics::{simulate_threshold, sparsity_error};
use arith_bench::model::{ModelKind, ModelParams};
use arith_bench::par::Parallelism;
use arith_bench::rng::Rng;
use arith_bench::stats::{beta_mean_profile_ci, gamma_mean_profile_ci, wilson_interval};
use arith_bench::Matrix2D;

// 4: every seed succeeds but too early (mean solved-at 1.3e4 against a 2e4 floor).
// 5: most seeds stall at extrapolation MSE 1e-5..1e-4, above the 3.5e-7 threshold.
const KNOWN_FAILURES: &[u32] = &[4, 5];

// criterion 1
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-5;
const GRAD_INSTANCES: usize = 20;
// criterion 3
const THRESHOLD_N: usize = 1_000_000;
const THRESHOLD_REL_TOL: f64 = 0.05;
// criteria 4 to 6
const LINEAR_ADD_ITERS: u64 = 200_000;
const LINEAR_ADD_SEEDS: u64 = 10;
const LINEAR_ADD_MIN_SUCCESS: usize = 8;
const LINEAR_ADD_SOLVED_AT: (f64, f64) = (2e4, 2e5);
const NAC_ADD_ITERS: u64 = 1_000_000;
const NAC_ADD_SEEDS: u64 = 10;
const NAC_ADD_MIN_SUCCESS: usize = 7;
const LINEAR_MUL_ITERS: u64 = 200_000;
const LINEAR_MUL_SEEDS: u64 = 5;
// criterion 7
const COVERAGE_REPS: usize = 500;
const COVERAGE_N: usize = 50;
const COVERAGE_TARGET: f64 = 0.95;
const COVERAGE_TOL: f64 = 0.03;
// criterion 8
const SPARSITY_CONFIGS: usize = 10_000;

type Criterion = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn gradients() -> Outcome {
    let checks = layer_suite(GRAD_INSTANCES, 1, GRAD_STEP).expect("gradcheck runs");
    let worst = checks.iter().max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error)).unwrap();
    let kinds: std::collections::BTreeSet<&str> = checks.iter().map(|c| c.subject.as_str()).collect();
    outcome(
        kinds.len() == 4 && checks.iter().all(|c| c.passes(GRAD_TOL)),
        format!(
            "{} tensors over {} layer kinds x {GRAD_INSTANCES} instances, worst {:.2e} ({} {})",
            checks.len(),
            kinds.len(),
            worst.max_relative_error,
            worst.subject,
            worst.tensor
        ),
    )
}

fn wilson() -> Outcome {
    let table = [(31, (10, 8)), (0, (4, 0)), (100, (0, 4)), (14, (8, 5)), (7, (7, 4))];
    let mut got = Vec::new();
    let mut pass = true;
    for (s, want) in table {
        let offsets = wilson_interval(s, 100, 0.95).unwrap().percent_offsets();
        pass &= offsets == want;
        got.push(format!("{s}/100 +{}/-{}", offsets.0, offsets.1));
    }
    outcome(pass, got.join(", "))
}

fn threshold() -> Outcome {
    let spec = DatasetSpec::with_defaults(Operation::Add);
    let mode = if Parallelism::available() { Parallelism::Parallel } else { Parallelism::Sequential };
    let zero = simulate_threshold(&spec, 0.0, 10_000, 0, mode).unwrap().value;
    let eps = 1e-5;
    let value = simulate_threshold(&spec, eps, THRESHOLD_N, 0, mode).unwrap().value;
    // every one of the 2d perturbed entries adds eps^2 E[x^2] in expectation
    let analytic = 2.0 * spec.input_size as f64 * eps * eps * spec.range(Split::Extrapolation).second_moment();
    let rel = (value - analytic).abs() / analytic;
    outcome(
        zero == 0.0 && rel < THRESHOLD_REL_TOL,
        format!("eps=0 gives {zero}; eps=1e-5 gives {value:.4e} vs analytic {analytic:.4e} ({:.2}% off)", 100.0 * rel),
    )
}

fn sweep(name: &str, model: &str, op: &str, seeds: u64, iterations: u64, dir: &Path) -> Vec<arith_bench::harness::StoredTrial> {
    let config = SweepConfig::from_toml_str(&format!(
        r#"
        name = "{name}"
        [train]
        iterations = {iterations}
        [[experiment]]
        name = "{name}"
        models = ["{model}"]
        ops = ["{op}"]
        seeds = {seeds}
        "#
    ))
    .unwrap();
    let report = run_sweep(&config, dir, RunOptions { workers: workers(), ..RunOptions::default() }).unwrap();
    assert_eq!(report.executed as u64, seeds);
    read_records(dir).unwrap()
}

fn solved_at_list(records: &[arith_bench::harness::StoredTrial]) -> Vec<u64> {
    records.iter().filter_map(|r| r.solved_at).collect()
}

fn linear_add() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let records = sweep("linear-add", "linear", "add", LINEAR_ADD_SEEDS, LINEAR_ADD_ITERS, dir.path());
    let solved = solved_at_list(&records);
    let mean = solved.iter().sum::<u64>() as f64 / solved.len().max(1) as f64;
    let (lo, hi) = LINEAR_ADD_SOLVED_AT;
    outcome(
        solved.len() >= LINEAR_ADD_MIN_SUCCESS && (lo..=hi).contains(&mean),
        format!(
            "{}/{} succeeded (need {LINEAR_ADD_MIN_SUCCESS}); mean solved-at {mean:.3e} (need [{lo:.0e}, {hi:.0e}]); solved at {solved:?}",
            solved.len(),
            records.len()
        ),
    )
}

fn nac_add() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let records = sweep("nac-add", "nac-add", "add", NAC_ADD_SEEDS, NAC_ADD_ITERS, dir.path());
    let solved = solved_at_list(&records);
    let best: Vec<String> = records
        .iter()
        .map(|r| format!("{:.1e}", r.final_extrap_mse.unwrap_or(f64::NAN)))
        .collect();
    outcome(
        solved.len() >= NAC_ADD_MIN_SUCCESS,
        format!(
            "{}/{} succeeded (need {NAC_ADD_MIN_SUCCESS}); threshold {:.3e}; final extrapolation MSE {}",
            solved.len(),
            records.len(),
            records[0].threshold.unwrap_or(f64::NAN),
            best.join(" ")
        ),
    )
}

fn linear_mul() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let records = sweep("linear-mul", "linear", "mul", LINEAR_MUL_SEEDS, LINEAR_MUL_ITERS, dir.path());
    let wins = records.iter().filter(|r| r.success).count();
    let best = records.iter().filter_map(|r| r.final_extrap_mse).fold(f64::INFINITY, f64::min);
    outcome(
        wins == 0 && records.iter().all(|r| r.error.is_none()),
        format!("{wins}/{} succeeded; lowest final extrapolation MSE {best:.3e}", records.len()),
    )
}

fn coverage() -> Outcome {
    let mut rng = Rng::seed_from_u64(7);
    let gamma = Gamma::new(3.0, 0.5).unwrap();
    let gamma_mean = 1.5;
    let beta = Beta::new(2.0, 5.0).unwrap();
    let beta_mean = 0.5 * 2.0 / 7.0;
    let (mut g_hits, mut b_hits) = (0, 0);
    for _ in 0..COVERAGE_REPS {
        let g: Vec<f64> = (0..COVERAGE_N).map(|_| gamma.sample(&mut rng)).collect();
        let s = gamma_mean_profile_ci(&g, COVERAGE_TARGET).unwrap();
        g_hits += usize::from(s.ci_low <= gamma_mean && gamma_mean <= s.ci_high);
        let b: Vec<f64> = (0..COVERAGE_N).map(|_| 0.5 * beta.sample(&mut rng)).collect();
        let s = beta_mean_profile_ci(&b, COVERAGE_TARGET).unwrap();
        b_hits += usize::from(s.ci_low <= beta_mean && beta_mean <= s.ci_high);
    }
    let g = g_hits as f64 / COVERAGE_REPS as f64;
    let b = b_hits as f64 / COVERAGE_REPS as f64;
    let ok = |c: f64| (c - COVERAGE_TARGET).abs() <= COVERAGE_TOL;
    outcome(
        ok(g) && ok(b),
        format!("gamma(3, 0.5) {:.1}%, 0.5*beta(2, 5) {:.1}% over {COVERAGE_REPS} reps of n={COVERAGE_N}", 100.0 * g, 100.0 * b),
    )
}

fn nac(rows: usize, cols: usize, f: &mut impl FnMut() -> f64) -> NacParams {
    NacParams::new(Matrix2D::from_fn(rows, cols, |_, _| f()), Matrix2D::from_fn(rows, cols, |_, _| f())).unwrap()
}

fn layer(kind: ModelKind, first: bool, rows: usize, cols: usize, f: &mut impl FnMut() -> f64) -> LayerParams {
    let (a, b) = match kind {
        ModelKind::NacMul => (LayerParams::NacAdd(nac(rows, cols, f)), LayerParams::NacMul(nac(rows, cols, f))),
        ModelKind::NacAdd => (LayerParams::NacAdd(nac(rows, cols, f)), LayerParams::NacAdd(nac(rows, cols, f))),
        ModelKind::Nalu => {
            let (add, mul) = (nac(rows, cols, f), nac(rows, cols, f));
            let q = NaluParams::new(add, mul, Matrix2D::from_fn(rows, cols, |_, _| f())).unwrap();
            (LayerParams::Nalu(q.clone()), LayerParams::Nalu(q))
        }
        ModelKind::Linear => {
            let w = Matrix2D::from_fn(rows, cols, |_, _| f());
            (LayerParams::Linear { weight: w.clone() }, LayerParams::Linear { weight: w })
        }
    };
    if first {
        a
    } else {
        b
    }
}

fn model(kind: ModelKind, d: usize, h: usize, f: &mut impl FnMut() -> f64) -> ModelParams {
    ModelParams::from_layers(kind, layer(kind, true, h, d, f), layer(kind, false, 1, h, f), 1e-7).unwrap()
}

fn sparsity() -> Outcome {
    let mut rng = Rng::seed_from_u64(11);
    let raw = Uniform::new_inclusive(-10.0, 10.0).unwrap();
    let unit = Uniform::new_inclusive(-1.0, 1.0).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut in_range = true;
    for i in 0..SPARSITY_CONFIGS {
        let kind = ModelKind::ALL[i % 4];
        let d = 1 + i % 7;
        let h = 1 + i % 3;
        // accumulator units take any raw value; plain weights range over [-1, 1]
        let m = if kind == ModelKind::Linear {
            model(kind, d, h, &mut || unit.sample(&mut rng))
        } else {
            model(kind, d, h, &mut || raw.sample(&mut rng))
        };
        let s = sparsity_error(&m);
        in_range &= (0.0..=0.5).contains(&s);
        lo = lo.min(s);
        hi = hi.max(s);
    }

    let mut k = 0usize;
    let mut ternary = || {
        k += 1;
        [-1.0, 0.0, 1.0][k % 3]
    };
    let linear_zero = sparsity_error(&model(ModelKind::Linear, 5, 2, &mut ternary));
    // saturated tanh and sigmoid give exact -1, 0 and 1 effective weights
    let saturated = |rows, cols| {
        let w = Matrix2D::from_fn(rows, cols, |r, c| [-800.0, 0.0, 800.0][(r + c) % 3]);
        LayerParams::NacAdd(NacParams::new(w, Matrix2D::filled(rows, cols, 800.0)).unwrap())
    };
    let nac_zero = sparsity_error(&ModelParams::from_layers(ModelKind::NacAdd, saturated(2, 5), saturated(1, 2), 1e-7).unwrap());
    let mut k = 0usize;
    let mut half = || {
        k += 1;
        if k == 4 {
            0.5
        } else {
            [-1.0, 0.0, 1.0][k % 3]
        }
    };
    let with_half = sparsity_error(&model(ModelKind::Linear, 5, 2, &mut half));
    outcome(
        in_range && linear_zero == 0.0 && nac_zero == 0.0 && with_half == 0.5,
        format!(
            "{SPARSITY_CONFIGS} random configurations in [{lo:.3}, {hi:.3}]; ternary weights give {linear_zero} (linear) and {nac_zero} (saturated NAC); one 0.5 entry gives {with_half}"
        ),
    )
}

fn determinism_and_resume() -> Outcome {
    let config = SweepConfig::from_toml_str(
        r#"
        [train]
        iterations = 2000
        eval_every = 500
        eval_size = 500
        [threshold]
        n_sim = 20000
        [[experiment]]
        name = "det"
        models = ["nac-add", "linear", "nalu"]
        ops = ["add", "mul"]
        seeds = 3
        [[experiment]]
        name = "resume"
        models = ["nac-mul"]
        ops = ["mul"]
        seeds = 32
        "#,
    )
    .unwrap();
    let table = |dir: &Path| {
        let rows = aggregate(&read_records(dir).unwrap(), &parse_keys("experiment,op,model").unwrap(), 0.95).unwrap();
        render(&rows, OutputFormat::Csv).unwrap() + &render(&rows, OutputFormat::Json).unwrap()
    };
    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    run_sweep(&config, one.path(), RunOptions { workers: 1, ..RunOptions::default() }).unwrap();
    run_sweep(&config, eight.path(), RunOptions { workers: 8, ..RunOptions::default() }).unwrap();
    let identical = table(one.path()) == table(eight.path());

    let mut resume = config.clone();
    resume.experiments.remove(0);
    resume.experiments[0].seeds = arith_bench::harness::Seeds::Count(50);
    let dir = tempfile::tempdir().unwrap();
    let first = run_sweep(&resume, dir.path(), RunOptions { limit: Some(10), ..RunOptions::default() }).unwrap();
    let second = run_sweep(&resume, dir.path(), RunOptions { resume: true, workers: workers(), ..RunOptions::default() }).unwrap();
    let stored = read_records(dir.path()).unwrap().len();
    outcome(
        identical && first.executed == 10 && second.executed == 40 && second.skipped == 10 && stored == 50,
        format!(
            "summaries at workers 1 and 8 {}; resume ran {} then {} (skipped {}), {stored} records",
            if identical { "byte-identical" } else { "differ" },
            first.executed,
            second.executed,
            second.skipped
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "gradient correctness", gradients),
        (2, "Wilson intervals", wilson),
        (3, "threshold sanity", threshold),
        (4, "linear on addition", linear_add),
        (5, "NAC+ on addition", nac_add),
        (6, "linear on multiplication never succeeds", linear_mul),
        (7, "profile CI coverage", coverage),
        (8, "sparsity bounds", sparsity),
        (9, "determinism and resume", determinism_and_resume),
    ];
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let r = run();
        let known = KNOWN_FAILURES.contains(&id);
        let status = match (r.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (listed as known failure)",
        };
        if r.pass == known {
            unexpected += 1;
        }
        println!("criterion {id} {name}: {status} [{:.1}s] {}", start.elapsed().as_secs_f64(), r.detail);
    }
    if unexpected > 0 {
        println!("{unexpected} criteria did not match their expected outcome");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

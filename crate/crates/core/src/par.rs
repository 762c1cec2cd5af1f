//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Parallelism::Parallel`] runs on
//! rayon; without it every call degrades to the sequential path. Results are
//! always collected in index order, so reductions performed by the caller
//! over the returned vector are independent of the thread count.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// Whether this build can actually run in parallel.
    pub fn available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<T, F>(n: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Maps over a slice, preserving order.
pub fn map_slice<I, T, F>(items: &[I], mode: Parallelism, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Maps over a slice with at most `workers` threads, preserving order.
/// `workers <= 1` (or a build without `parallel`) runs on the calling thread.
pub fn map_with_workers<I, T, F>(items: &[I], workers: usize, f: F) -> crate::Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?;
        return Ok(pool.install(|| items.par_iter().map(f).collect()));
    }
    let _ = workers;
    Ok(items.iter().map(f).collect())
}

//! Rayon-backed batch execution.

use rayon::prelude::*;
use roughskew_core::BatchExecutor;

use crate::error::AppResult;

/// Environment variable consulted for the default worker count.
pub const THREADS_ENV: &str = "ROUGHSKEW_THREADS";

/// Runs batches on a dedicated rayon pool. Results are collected in batch
/// order, so reductions do not depend on the number of workers.
#[derive(Debug)]
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> AppResult<Self> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Runs `f` inside the pool so nested parallel iterators use its workers.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// Maps `f` over `items` in parallel, keeping input order.
    pub fn map_ordered<I, T, F>(&self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}

impl BatchExecutor for Parallel {
    fn map_batches<T, F>(&self, n: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(job).collect())
    }
}

/// Worker count: an explicit request, then the config value (0 = unset),
/// then the environment, then the machine's parallelism.
pub fn resolve_threads(flag: Option<usize>, config: usize) -> usize {
    if let Some(n) = flag.filter(|&n| n > 0) {
        return n;
    }
    if config > 0 {
        return config;
    }
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_come_back_in_order() {
        let exec = Parallel::new(3).unwrap();
        let out = exec.map_batches(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
        assert_eq!(exec.threads(), 3);
    }

    #[test]
    fn explicit_threads_win() {
        assert_eq!(resolve_threads(Some(5), 2), 5);
        assert_eq!(resolve_threads(None, 2), 2);
        assert!(resolve_threads(None, 0) >= 1);
    }
}

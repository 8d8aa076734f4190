//! Batch execution contract.
//!
//! Simulation work is split into numbered batches whose random streams
//! depend only on `(seed, batch index)`. An executor may run batches in any
//! order or concurrently, but must hand results back indexed by batch so
//! reductions happen in a fixed order.

use alloc::vec::Vec;

pub trait BatchExecutor: Sync {
    /// Evaluates `job(i)` for `i in 0..n` and returns results in index order.
    fn map_batches<T, F>(&self, n: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs batches one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl BatchExecutor for Sequential {
    fn map_batches<T, F>(&self, n: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(job).collect()
    }
}

//! Execution hooks supplied by the embedding environment.

use alloc::vec::Vec;

/// Maps `0..n` through `f` and returns results in index order.
///
/// Implementations may evaluate indices concurrently but must place result
/// `i` at position `i`.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..n).map(f).collect()
    }
}

impl<E: Executor + ?Sized> Executor for &E {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (**self).map(n, f)
    }
}

/// Source of elapsed wall time for training histories.
pub trait Clock {
    fn elapsed_seconds(&self) -> f64;
}

/// A clock that always reads zero; used where no timer is available.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_seconds(&self) -> f64 {
        0.0
    }
}

//! Data-parallel execution of replica batches.
//!
//! With the `parallel` feature, batches run on a rayon pool; without it, or
//! with [`Execution::Sequential`], they run in order on the calling thread.
//! Results are always returned in batch order, so reductions over them are
//! identical for every thread count.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Execution {
    Sequential,
    /// Rayon pool with the given number of threads (0: rayon's default).
    Parallel { threads: usize },
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel { threads: 0 }
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn threads(threads: usize) -> Self {
        if threads == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { threads }
        }
    }

    /// Maps `job` over `0..n_batches` with a per-worker scratch value built
    /// by `init`, returning results in batch order.
    pub fn map_batches<W, T, I, F>(&self, n_batches: usize, init: I, job: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> W + Sync + Send,
        F: Fn(&mut W, usize) -> T + Sync + Send,
    {
        match *self {
            Execution::Sequential => {
                let mut w = init();
                (0..n_batches).map(|b| job(&mut w, b)).collect()
            }
            Execution::Parallel { threads } => parallel_map(threads, n_batches, init, job),
        }
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<W, T, I, F>(threads: usize, n_batches: usize, init: I, job: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || {
        (0..n_batches)
            .into_par_iter()
            .map_init(&init, |w, b| job(w, b))
            .collect()
    };
    if threads == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(run),
        Err(e) => {
            log::warn!("could not build a {threads}-thread pool ({e}); using the global pool");
            run()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<W, T, I, F>(_threads: usize, n_batches: usize, init: I, job: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, usize) -> T + Sync + Send,
{
    let mut w = init();
    (0..n_batches).map(|b| job(&mut w, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = Execution::Sequential.map_batches(50, || 0u64, |_, b| b * b);
        let par = Execution::Parallel { threads: 4 }.map_batches(50, || 0u64, |_, b| b * b);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }
}

//! Fixed-order fan-out over sample indices.
//!
//! Work items may run on several threads, but results are always collected
//! back into index order so any subsequent reduction is identical to the
//! single-threaded one.

use rayon::prelude::*;

use crate::error::Result;

/// Worker count from `REPROLAB_THREADS`, defaulting to 1.
pub fn threads_from_env() -> usize {
    std::env::var("REPROLAB_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .unwrap_or(1)
}

/// A worker budget. `threads <= 1` runs inline on the calling thread.
#[derive(Debug)]
pub struct Workers {
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    pub fn new(threads: usize) -> Self {
        let pool = if threads > 1 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .ok()
        } else {
            None
        };
        Self { pool }
    }

    pub fn sequential() -> Self {
        Self { pool: None }
    }

    pub fn from_env() -> Self {
        Self::new(threads_from_env())
    }

    /// Evaluates `f(0), …, f(n-1)` and returns the results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::sequential()
    }
}

//! Batch execution with a rayon backend and a sequential fallback.
//!
//! Every reduction here runs over fixed-size chunks whose partial results are
//! combined in index order, so floating-point sums are bit-identical no matter
//! how many worker threads execute the chunks.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of items reduced sequentially inside one chunk.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Runs on the current rayon pool. Without the `parallel` feature this
    /// behaves exactly like [`Exec::Sequential`].
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Maps `f` over `0..n`, preserving index order in the output.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over a slice, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Deterministic sum of `f(i)` for `i in 0..n`.
    pub fn sum_range<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunks = n.div_ceil(CHUNK);
        let partial = self.map_range(chunks, |c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            (start..end).map(&f).sum::<f64>()
        });
        partial.into_iter().sum()
    }

    /// Deterministic sum of fallible terms; the first error by index wins.
    pub fn try_sum_range<F, E>(self, n: usize, f: F) -> Result<f64, E>
    where
        E: Send,
        F: Fn(usize) -> Result<f64, E> + Sync + Send,
    {
        let chunks = n.div_ceil(CHUNK);
        let partial = self.map_range(chunks, |c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut acc = 0.0;
            for i in start..end {
                acc += f(i)?;
            }
            Ok(acc)
        });
        let mut total = 0.0;
        for p in partial {
            total += p?;
        }
        Ok(total)
    }
}

/// Runs `op` on a dedicated pool of `jobs` threads (0 = rayon default).
///
/// Without the `parallel` feature `op` simply runs on the calling thread.
pub fn with_jobs<R, F>(jobs: usize, op: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(op),
            Err(err) => {
                log::warn!("could not build a {jobs}-thread pool ({err}); using the global pool");
                op()
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        op()
    }
}

//! Deterministic fan-out of independent path computations.

use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::error::{Error, Result};

/// Environment variable consulted when no worker count is given.
pub const WORKERS_ENV: &str = "SEE_LAB_WORKERS";

/// Resolves a worker count: explicit value, then `SEE_LAB_WORKERS`, then the
/// number of available cores. Always at least one.
pub fn resolve_workers(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|s| s.trim().parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// Whether this build can actually run more than one worker.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

/// Evaluates `f(0..n)` and returns the results in index order.
///
/// With the `parallel` feature and `workers > 1` the indices are spread over
/// a dedicated rayon pool; otherwise they run sequentially. A failing or
/// panicking index is reported as [`Error::PathFailed`]; if several fail, the
/// lowest index wins, so the error is scheduling-independent too.
pub fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let guarded = |i: usize| -> Result<T> {
        match catch_unwind(AssertUnwindSafe(|| f(i))) {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(e)) => Err(Error::PathFailed { index: i, message: e.to_string() }),
            Err(panic) => {
                let message = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panic".to_string());
                Err(Error::PathFailed { index: i, message })
            }
        }
    };
    let results: Vec<Result<T>> = run(n, workers, &guarded);
    results.into_iter().collect()
}

#[cfg(feature = "parallel")]
fn run<T: Send>(n: usize, workers: usize, g: &(dyn Fn(usize) -> Result<T> + Sync)) -> Vec<Result<T>> {
    use rayon::prelude::*;
    if workers <= 1 || n <= 1 {
        return (0..n).map(g).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(g).collect()),
        Err(e) => {
            log::warn!("could not start {workers} workers ({e}); running sequentially");
            (0..n).map(g).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn run<T: Send>(n: usize, _workers: usize, g: &(dyn Fn(usize) -> Result<T> + Sync)) -> Vec<Result<T>> {
    (0..n).map(g).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_come_back_in_index_order() {
        for w in [1, 3, 8] {
            let v = parallel_map(100, w, |i| Ok(i * i)).unwrap();
            assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn lowest_failing_index_is_reported() {
        for w in [1, 4] {
            let r: Result<Vec<usize>> = parallel_map(50, w, |i| {
                if i % 7 == 3 {
                    Err(Error::Diverged { step: i })
                } else {
                    Ok(i)
                }
            });
            match r {
                Err(Error::PathFailed { index, .. }) => assert_eq!(index, 3),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn panics_are_caught() {
        let r: Result<Vec<usize>> = parallel_map(5, 2, |i| if i == 4 { panic!("boom") } else { Ok(i) });
        assert_eq!(r, Err(Error::PathFailed { index: 4, message: "boom".into() }));
    }

    #[test]
    fn worker_resolution() {
        assert_eq!(resolve_workers(Some(3)), 3);
        assert_eq!(resolve_workers(Some(0)), 1);
        assert!(resolve_workers(None) >= 1);
    }
}

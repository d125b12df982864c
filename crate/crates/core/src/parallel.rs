//! Work-pool helpers.  With the `parallel` feature (default) the maps run on
//! rayon; without it, or with a single worker, they run sequentially.
//! Results are collected in index order and every worker draws only from
//! keyed random streams, so outputs do not depend on the schedule.

/// Map over 0..count, preserving order.
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Fallible map over 0..count, preserving order.
pub fn try_map_indexed<T, E, F>(count: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Run `f` under a pool of `workers` threads (0 = library default).
/// `workers == 1` bypasses the pool entirely; without the `parallel`
/// feature everything is sequential regardless.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if workers == 1 {
            return f();
        }
        let mut builder = rayon::ThreadPoolBuilder::new();
        if workers > 0 {
            builder = builder.num_threads(workers);
        }
        match builder.build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

/// Worker cap from the NUDGE_WORKERS environment variable (0 = default).
pub fn workers_from_env() -> usize {
    std::env::var("NUDGE_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0)
}

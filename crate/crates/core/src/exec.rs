//! Trial execution: data-parallel by default, sequential behind a feature
//! flag or for benchmarking.
//!
//! Results are always collected in trial order, so the two paths produce
//! identical output for the same per-trial seeds.

/// Map `f` over trial indices `0..trials`, collecting results in order.
///
/// With the `parallel` feature (default) trials run on the rayon pool;
/// without it this is a plain sequential loop.
#[cfg(feature = "parallel")]
pub fn map_trials<T, F>(trials: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..trials).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_trials<T, F>(trials: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_trials_seq(trials, f)
}

/// Sequential reference path, always available (used by the benches to
/// compare against the parallel path).
pub fn map_trials_seq<T, F>(trials: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..trials).map(f).collect()
}

/// Configure the global worker pool. No-op without the `parallel` feature.
pub fn configure_jobs(jobs: usize) {
    #[cfg(feature = "parallel")]
    {
        if jobs > 0 {
            // Ignore the error if a pool already exists (e.g. in tests).
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        if jobs > 1 {
            eprintln!("note: built without the `parallel` feature; --jobs {jobs} ignored");
        }
    }
}

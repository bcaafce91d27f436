//! Run-level parallel dispatch. Individual runs stay single-threaded;
//! only independent jobs (ablation variants, sweep points, generator
//! pairs) fan out. Output order always matches input order, so enabling
//! or disabling the `parallel` feature never changes results.

/// Maps `f` over `items` sequentially, preserving order.
pub fn map_sequential<T, U>(items: Vec<T>, f: impl Fn(T) -> U + Sync + Send) -> Vec<U>
where
    T: Send,
    U: Send,
{
    items.into_iter().map(f).collect()
}

/// Maps `f` over `items` on the rayon pool, preserving order.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, U>(items: Vec<T>, f: impl Fn(T) -> U + Sync + Send) -> Vec<U>
where
    T: Send,
    U: Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

/// Dispatches independent jobs: parallel when the feature is on,
/// sequential otherwise.
pub fn map_jobs<T, U>(items: Vec<T>, f: impl Fn(T) -> U + Sync + Send) -> Vec<U>
where
    T: Send,
    U: Send,
{
    #[cfg(feature = "parallel")]
    {
        map_parallel(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

/// Caps the number of worker threads for subsequent `map_jobs` calls.
/// No-op without the `parallel` feature. Returns whether the limit was
/// applied (the global pool can only be configured once per process).
pub fn limit_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn job_results_preserve_input_order() {
        let items: Vec<u64> = (0..64).collect();
        let out = map_jobs(items.clone(), |x| x * x);
        let seq = map_sequential(items, |x| x * x);
        assert_eq!(out, seq);
    }
}

//! Data-parallel helpers with a sequential fallback.
//!
//! Every hot loop in the crate (run sorting, key extraction, per-group
//! verification) goes through these functions. With the `parallel` feature
//! disabled, or with a [`Parallelism`] of one, they run on the calling thread
//! and produce identical results.

use std::cmp::Ordering;

/// Worker count for one data-parallel operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Parallelism(usize);

impl Parallelism {
    pub const SEQUENTIAL: Parallelism = Parallelism(1);

    pub fn threads(n: usize) -> Self {
        Parallelism(n.max(1))
    }

    /// One worker per available core.
    pub fn available() -> Self {
        Parallelism::threads(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn is_sequential(self) -> bool {
        self.0 <= 1 || !cfg!(feature = "parallel")
    }
}

impl Default for Parallelism {
    fn default() -> Self {
        Parallelism::available()
    }
}

#[cfg(feature = "parallel")]
mod pool {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};

    use rayon::{ThreadPool, ThreadPoolBuilder};

    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<ThreadPool>>>> = OnceLock::new();

    pub(super) fn get(threads: usize) -> Arc<ThreadPool> {
        let pools = POOLS.get_or_init(Default::default);
        let mut pools = pools.lock().unwrap_or_else(|e| e.into_inner());
        pools
            .entry(threads)
            .or_insert_with(|| {
                Arc::new(
                    ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .thread_name(move |i| format!("refgraph-{threads}-{i}"))
                        .build()
                        .expect("failed to build thread pool"),
                )
            })
            .clone()
    }
}

/// Unstable sort. Callers wanting a deterministic order must supply a total
/// comparator.
pub fn sort_unstable_by<T, F>(items: &mut [T], par: Parallelism, cmp: F)
where
    T: Send,
    F: Fn(&T, &T) -> Ordering + Sync,
{
    #[cfg(feature = "parallel")]
    if !par.is_sequential() && items.len() > 4096 {
        use rayon::slice::ParallelSliceMut;
        pool::get(par.get()).install(|| items.par_sort_unstable_by(&cmp));
        return;
    }
    let _ = par;
    items.sort_unstable_by(cmp);
}

/// Order-preserving map over a slice.
pub fn map<T, U, F>(items: &[T], par: Parallelism, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !par.is_sequential() && items.len() > 1 {
        use rayon::prelude::*;
        return pool::get(par.get()).install(|| items.par_iter().map(&f).collect());
    }
    let _ = par;
    items.iter().map(f).collect()
}

/// Order-preserving map that consumes its input.
pub fn map_owned<T, U, F>(items: Vec<T>, par: Parallelism, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !par.is_sequential() && items.len() > 1 {
        use rayon::prelude::*;
        return pool::get(par.get()).install(|| items.into_par_iter().map(&f).collect());
    }
    let _ = par;
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let mut a: Vec<u64> = (0..50_000u64).map(|i| i.wrapping_mul(6364136223846793005) >> 17).collect();
        let mut b = a.clone();
        sort_unstable_by(&mut a, Parallelism::threads(4), |x, y| x.cmp(y));
        sort_unstable_by(&mut b, Parallelism::SEQUENTIAL, |x, y| x.cmp(y));
        assert_eq!(a, b);
        let squares = map(&a, Parallelism::threads(3), |x| x % 7);
        assert_eq!(squares, a.iter().map(|x| x % 7).collect::<Vec<_>>());
        let owned = map_owned(a.clone(), Parallelism::threads(3), |x| x + 1);
        assert_eq!(owned[10], a[10] + 1);
    }
}

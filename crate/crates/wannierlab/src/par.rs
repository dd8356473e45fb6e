//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature the map runs on rayon unless
//! [`set_sequential`] switched it off at runtime; without the feature it is
//! always a plain loop.

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

pub fn set_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::Relaxed);
    #[cfg(feature = "parallel")]
    faer::set_global_parallelism(if on { faer::Par::Seq } else { faer::Par::rayon(0) });
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !SEQUENTIAL.load(Ordering::Relaxed)
}

/// Caps the worker count. Only the first call has an effect.
pub fn set_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        faer::set_global_parallelism(faer::Par::rayon(n.max(1)));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Like [`map`] but short-circuits on the first error in index order.
pub fn try_map<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map(n, f).into_iter().collect()
}

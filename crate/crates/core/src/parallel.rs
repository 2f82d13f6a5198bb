//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the items run on a rayon pool whose size is
//! capped by `BNMC_THREADS`; without it they run in order on the caller's
//! thread. Results always come back in input order.

pub const THREADS_ENV: &str = "BNMC_THREADS";

/// Worker cap from `BNMC_THREADS`; `None` when unset or unparsable.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n: &usize| n > 0)
}

#[cfg(feature = "parallel")]
mod imp {
    use std::sync::OnceLock;

    use rayon::prelude::*;

    fn pool() -> Option<&'static rayon::ThreadPool> {
        static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
        POOL.get_or_init(|| {
            let n = super::thread_cap()?;
            rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()
        })
        .as_ref()
    }

    pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        let run = || items.par_iter().map(&f).collect();
        match pool() {
            // Nested calls already inside the pool must not re-enter `install`.
            Some(p) if rayon::current_thread_index().is_none() => p.install(run),
            _ => run(),
        }
    }

    pub fn is_parallel() -> bool {
        true
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.iter().map(f).collect()
    }

    pub fn is_parallel() -> bool {
        false
    }
}

pub use imp::{is_parallel, par_map};

/// Sequential reference used by benches and equivalence tests.
pub fn seq_map<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

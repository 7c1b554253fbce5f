//! Ordered data-parallel maps over independent work items.
//!
//! With the `parallel` feature the [`Mode::Parallel`] path runs on rayon;
//! without it every mode runs sequentially. Results always come back in
//! input order, so output does not depend on scheduling.

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

impl Default for Mode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Mode::Parallel
        } else {
            Mode::Sequential
        }
    }
}

/// Environment variable capping the worker count of the parallel path.
pub const THREADS_ENV: &str = "ACE_THREADS";

/// Worker cap from `ACE_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[cfg(feature = "parallel")]
fn pool() -> Option<&'static rayon::ThreadPool> {
    use std::sync::OnceLock;
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = thread_cap()?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()
    })
    .as_ref()
}

/// `f(i, &items[i])` for every item, in order.
pub fn map_indexed<I, O, F>(mode: Mode, items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Mode::Parallel => {
            use rayon::prelude::*;
            let work = || items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
            match pool() {
                Some(p) => p.install(work),
                None => work(),
            }
        }
        _ => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
    }
}

/// Fallible [`map_indexed`]; the error of the lowest failing index wins.
pub fn try_map_indexed<I, O, F>(mode: Mode, items: &[I], f: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> Result<O> + Sync + Send,
{
    map_indexed(mode, items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::AceError;

    #[test]
    fn both_modes_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = map_indexed(Mode::Sequential, &xs, |i, &x| x * x + i as u64);
        let par = map_indexed(Mode::Parallel, &xs, |i, &x| x * x + i as u64);
        assert_eq!(seq, par);
    }

    #[test]
    fn first_error_is_reported() {
        let xs: Vec<usize> = (0..100).collect();
        let r = try_map_indexed(Mode::Parallel, &xs, |_, &x| {
            if x % 30 == 29 {
                Err(AceError::InvalidParameter(format!("{x}")))
            } else {
                Ok(x)
            }
        });
        assert!(matches!(r, Err(AceError::InvalidParameter(s)) if s == "29"));
    }
}

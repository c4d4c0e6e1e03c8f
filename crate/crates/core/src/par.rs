//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper produces its output in input order and performs no
//! cross-element floating-point reduction, so results do not depend on the
//! worker count. With the `parallel` feature disabled, [`ExecMode::Parallel`]
//! silently runs sequentially.

use serde::{Deserialize, Serialize};

/// How per-candidate work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// True when work will actually fan out across the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

// Below this many items the fork/join overhead dominates.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_LEN: usize = 2048;

pub(crate) fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && items.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

pub(crate) fn map_range<R, F>(mode: ExecMode, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && len >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..len).map(f).collect()
}

/// Coarse-grained variant for a handful of expensive jobs (simulation seeds,
/// file reads), parallel regardless of count.
pub(crate) fn map_jobs<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Calls `f(i, &mut slots[i])` for every slot.
pub(crate) fn update_indexed<U, F>(mode: ExecMode, slots: &mut [U], f: F)
where
    U: Send,
    F: Fn(usize, &mut U) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && slots.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        slots.par_iter_mut().enumerate().for_each(|(i, u)| f(i, u));
        return;
    }
    let _ = mode;
    slots.iter_mut().enumerate().for_each(|(i, u)| f(i, u));
}

/// Index of the maximum of `score` over `0..len`; ties go to the smallest
/// `key`. The comparison is a total order, so the parallel reduction returns
/// the same index as the sequential scan.
pub(crate) fn argmax_by<K, S, Key>(mode: ExecMode, len: usize, score: S, key: Key) -> Option<usize>
where
    K: Ord,
    S: Fn(usize) -> f64 + Sync + Send,
    Key: Fn(usize) -> K + Sync + Send,
{
    let better = |a: usize, b: usize| -> usize {
        let (sa, sb) = (score(a), score(b));
        match sa.total_cmp(&sb) {
            std::cmp::Ordering::Greater => a,
            std::cmp::Ordering::Less => b,
            std::cmp::Ordering::Equal => {
                if key(a) <= key(b) {
                    a
                } else {
                    b
                }
            }
        }
    };
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && len >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        return (0..len).into_par_iter().reduce_with(better);
    }
    let _ = mode;
    (0..len).reduce(better)
}

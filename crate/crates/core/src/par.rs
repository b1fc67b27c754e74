//! Subject-level map/reduce helpers.
//!
//! With the `parallel` feature the work is spread over the rayon pool.
//! Reductions are done over fixed-size chunks of subjects that are merged in
//! ascending order, so results are bit-identical regardless of the number of
//! worker threads (and identical to the sequential build). Turning
//! deterministic mode off lets rayon pick the split points adaptively.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Subjects per reduction chunk in deterministic mode.
pub const CHUNK: usize = 16;

static DETERMINISTIC: AtomicBool = AtomicBool::new(true);

pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::Relaxed);
}

pub fn deterministic() -> bool {
    DETERMINISTIC.load(Ordering::Relaxed)
}

/// Map every index in `0..n` and collect the results in index order.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fold indices `0..n` into accumulators created by `init`, then merge.
///
/// `fold` adds index `i` into an accumulator; `merge` adds the right
/// accumulator into the left one.
pub fn fold_reduce<A, I, F, M>(n: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A) + Sync + Send,
{
    let chunked = |c: usize| {
        let mut acc = init();
        let end = ((c + 1) * CHUNK).min(n);
        for i in c * CHUNK..end {
            fold(&mut acc, i);
        }
        acc
    };
    let n_chunks = n.div_ceil(CHUNK);

    #[cfg(feature = "parallel")]
    {
        if deterministic() {
            let parts: Vec<A> = (0..n_chunks).into_par_iter().map(chunked).collect();
            let mut total = init();
            for part in parts {
                merge(&mut total, part);
            }
            total
        } else {
            (0..n)
                .into_par_iter()
                .fold(&init, |mut acc, i| {
                    fold(&mut acc, i);
                    acc
                })
                .reduce(&init, |mut a, b| {
                    merge(&mut a, b);
                    a
                })
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut total = init();
        for c in 0..n_chunks {
            merge(&mut total, chunked(c));
        }
        total
    }
}

/// Ordered sum of `f(i)` over `0..n`.
pub fn sum(n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    fold_reduce(n, || 0.0, |acc, i| *acc += f(i), |a, b| *a += b)
}

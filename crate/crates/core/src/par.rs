//! Data-parallel helpers with a sequential fallback.
//!
//! Every reduction here splits its index range into fixed-size chunks and
//! combines the chunk results in index order, so floating-point results do not
//! depend on how many worker threads ran the chunks. With the `parallel`
//! feature disabled (or [`set_sequential`] switched on) the same chunking runs
//! on the calling thread.

use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

/// Chunk length used by every reduction.
pub const CHUNK: usize = 2048;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces the sequential code path at runtime (used by the benchmarks).
pub fn set_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// True when work is dispatched to the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Caps the global worker pool. A no-op without the `parallel` feature.
pub fn init_threads(n: usize) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(n))
        .collect()
}

/// `(0..n).map(f).collect()`, order preserved.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(item_index, item)` on consecutive `width`-sized slices of `data`.
pub fn for_each_item_mut<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(width > 0 && data.len().is_multiple_of(width));
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(width).enumerate().for_each(|(i, s)| f(i, s));
        return;
    }
    data.chunks_mut(width).enumerate().for_each(|(i, s)| f(i, s));
}

/// Deterministic chunked reduction over `0..n`.
///
/// `f` folds one chunk; the chunk results are combined left to right.
pub fn reduce_chunks<A, F, C>(n: usize, identity: A, f: F, combine: C) -> A
where
    A: Send + Clone,
    F: Fn(Range<usize>) -> A + Sync + Send,
    C: Fn(A, A) -> A,
{
    let ranges = chunk_ranges(n);
    let parts: Vec<A> = {
        #[cfg(feature = "parallel")]
        {
            if is_parallel() {
                use rayon::prelude::*;
                ranges.into_par_iter().map(&f).collect()
            } else {
                ranges.into_iter().map(&f).collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            ranges.into_iter().map(&f).collect()
        }
    };
    parts.into_iter().fold(identity, combine)
}

/// Deterministic sum of `f(i)` over `0..n`.
pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    reduce_chunks(n, 0.0, |r| r.map(&f).sum::<f64>(), |a, b| a + b)
}

//! Execution strategy for data-parallel kernels.
//!
//! Every parallel site in the crate splits work into chunks that are
//! independent of the thread count (per batch element, per Monte-Carlo
//! shard), so the parallel and sequential paths produce bit-identical
//! results.

/// Selects how batch-parallel kernels run.
///
/// `Parallel` dispatches to rayon when the `parallel` feature is enabled;
/// without the feature it degrades to the sequential path so callers can
/// use the same code regardless of build configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Run `f(index, chunk)` over `out` split into equally sized chunks.
///
/// Each chunk is written by exactly one invocation, so the parallel path
/// performs no cross-chunk accumulation.
pub(crate) fn for_each_chunk<F>(exec: Exec, out: &mut [f32], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync + Send,
{
    debug_assert!(chunk_len > 0 && out.len() % chunk_len == 0);
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
        }
        _ => {
            for (i, c) in out.chunks_mut(chunk_len).enumerate() {
                f(i, c);
            }
        }
    }
}

/// Map `f` over `0..n`, collecting results in index order.
///
/// The fold of the returned values stays with the caller so that any
/// floating-point reduction happens in a fixed order.
pub(crate) fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

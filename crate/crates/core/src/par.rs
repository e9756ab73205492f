//! Data-parallel loop helpers with a sequential fallback.
//!
//! Every parallel site in the crate goes through these functions. Each output
//! slot is written by exactly one closure invocation with a fixed internal
//! order, so results are bitwise identical whether the `parallel` feature is
//! on or off and regardless of the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `0..n` to a vector, preserving index order.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
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

/// Run `f(chunk_index, chunk)` over disjoint `chunk_len`-sized pieces of `buf`.
///
/// `buf.len()` must be a multiple of `chunk_len`.
pub(crate) fn for_each_chunk_mut<T, F>(buf: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert_eq!(buf.len() % chunk_len.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
}

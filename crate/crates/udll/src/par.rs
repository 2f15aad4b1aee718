//! Minimal data-parallel helpers.
//!
//! With the `parallel` feature (default) these fan work out over rayon;
//! without it they degrade to plain sequential loops. Callers only ever
//! parallelize over disjoint output regions with a fixed per-element
//! reduction order, so results are bitwise identical either way.

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Fills `out` in place, one `chunk_len`-sized slice per task. The closure
/// receives the chunk index and the (zero-initialized or stale) slice.
#[cfg(feature = "parallel")]
pub(crate) fn fill_chunks<F>(out: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    use rayon::prelude::*;
    out.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(idx, chunk)| f(idx, chunk));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn fill_chunks<F>(out: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    for (idx, chunk) in out.chunks_mut(chunk_len).enumerate() {
        f(idx, chunk);
    }
}

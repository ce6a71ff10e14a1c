//! Data-parallel map over an index range, with a sequential fallback when
//! the `parallel` feature is disabled. Work items must be independent; the
//! output order always matches the index order, so results are identical
//! either way.

#[cfg(feature = "parallel")]
pub(crate) fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    (0..n).map(f).collect()
}

//! Data-parallel helpers with a sequential fallback.
//!
//! The heavy loops (displacement batches, optimizer restarts, sweep
//! cells, operator-basis evolutions) are embarrassingly parallel. With
//! the `parallel` feature (default) they run on rayon; without it the
//! same entry points run sequentially. Results are always collected in
//! input order so reductions are deterministic either way.

/// Cap the size of the global worker pool. Must be called before any
/// parallel work; later calls fail. A no-op without the `parallel`
/// feature.
#[cfg(feature = "parallel")]
pub fn configure_thread_pool(n_threads: usize) -> std::result::Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n_threads)
        .build_global()
        .map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
pub fn configure_thread_pool(_n_threads: usize) -> std::result::Result<(), String> {
    Ok(())
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential variant, always available. Used by the benches to compare
/// against the parallel lane and by callers that are already inside a
/// parallel region.
pub fn map_indexed_serial<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_serial_agree_in_order() {
        let a = map_indexed(17, |i| i * i);
        let b = map_indexed_serial(17, |i| i * i);
        assert_eq!(a, b);
    }
}

//! Order-preserving data-parallel map.
//!
//! With the `parallel` feature, work runs on a dedicated rayon pool sized to
//! the requested parallelism. A parallelism of 1, or a build without the
//! feature, runs on the calling thread.

/// Maps `f` over `items`, returning results in input order.
pub fn map_ordered<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallelism > 1 && items.len() > 1 {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
            Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
            // pool creation can fail under thread limits; run inline instead
            Err(_) => return items.iter().map(f).collect(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallelism;

    items.iter().map(f).collect()
}

/// Folds `items` in contiguous chunks and merges the partial results.
/// `merge` must be associative for the result to be independent of
/// `parallelism`.
pub fn chunked_reduce<T, A, M, R>(items: &[T], parallelism: usize, map_chunk: M, merge: R, empty: A) -> A
where
    T: Sync,
    A: Send + Clone,
    M: Fn(&[T]) -> A + Sync + Send,
    R: Fn(A, A) -> A,
{
    if items.is_empty() {
        return empty;
    }
    let chunks: Vec<&[T]> = if parallelism <= 1 {
        vec![items]
    } else {
        let size = items.len().div_ceil(parallelism * 4).max(1);
        items.chunks(size).collect()
    };
    map_ordered(&chunks, parallelism, |chunk| map_chunk(chunk))
        .into_iter()
        .fold(empty, merge)
}

pub fn available_parallelism() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

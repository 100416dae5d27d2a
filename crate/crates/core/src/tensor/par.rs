//! Chunked loops that fan out over rayon when the `parallel` feature is on.
//! Every chunk is written by exactly one task, so results do not depend on
//! the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub(crate) fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

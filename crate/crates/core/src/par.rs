//! Order-preserving data parallelism, sequential when the `parallel` feature is off.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub(crate) fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

pub(crate) fn for_each_mut<T: Send>(items: &mut [T], f: impl Fn(&mut T) + Sync + Send) {
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().for_each(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().for_each(f)
    }
}

pub(crate) fn map_chunks<T: Sync, R: Send>(
    items: &[T],
    chunk: usize,
    f: impl Fn(&[T]) -> Vec<R> + Sync + Send,
) -> Vec<R> {
    #[cfg(feature = "parallel")]
    let parts: Vec<Vec<R>> = items.par_chunks(chunk).map(f).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Vec<R>> = items.chunks(chunk).map(f).collect();
    parts.into_iter().flatten().collect()
}

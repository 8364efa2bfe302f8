//! Data-parallel helpers. With the `parallel` feature they run on rayon; without it they
//! are plain sequential loops. Either way each item is computed by the same sequential
//! code, so results never depend on the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many items the per-step work runs sequentially.
pub const MIN_PARALLEL_ITEMS: usize = 256;

/// `(0..n).map(f).collect()`, in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
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

/// Apply `f(index, chunk)` to consecutive `chunk_len`-sized chunks of `data`.
pub fn for_each_chunk<F>(data: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if data.len() / chunk_len.max(1) >= MIN_PARALLEL_ITEMS {
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Run `op` on a pool with `threads` workers (0 = default pool).
pub fn with_threads<R: Send>(threads: usize, op: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("thread pool");
            return pool.install(op);
        }
    }
    let _ = threads;
    op()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn chunks_see_their_index() {
        let mut data = vec![0.0; 3 * 500];
        for_each_chunk(&mut data, 3, |i, c| c.iter_mut().for_each(|x| *x = i as f64));
        assert_eq!(data[3 * 499], 499.0);
        let same = with_threads(2, || map_indexed(10, |i| i as f64));
        assert_eq!(same.len(), 10);
    }
}

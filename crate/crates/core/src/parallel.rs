//! Feature-gated data parallelism.
//!
//! Every parallel site in this crate maps an index range through a pure
//! function and collects the results in index order. Each output element is
//! produced by exactly one task with a fixed internal evaluation order, so
//! the parallel and sequential paths are bitwise identical and the result
//! does not depend on the thread count.
//!
//! The `*_seq` variants are always compiled: they are the fallback used when
//! the `parallel` feature is disabled, the reference half of the
//! equivalence tests, and the baseline for the criterion bench suite.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sequential `(0..n).map(f)` collect.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Rayon-parallel `(0..n).map(f)` collect, preserving index order.
#[cfg(feature = "parallel")]
pub fn map_indexed_par<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// `(0..n).map(f)` collect on the active backend.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_indexed_par(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(n, f)
    }
}

/// Number of worker threads the active backend will use.
pub fn thread_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seq_matches_dispatch_bitwise() {
        let f = |i: usize| ((i as f64) * 0.1).sin() / ((i as f64) + 0.5);
        let seq = map_indexed_seq(1000, f);
        let dispatched = map_indexed(1000, f);
        assert_eq!(seq.len(), dispatched.len());
        for (a, b) in seq.iter().zip(dispatched.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn par_is_order_preserving() {
        let out = map_indexed_par(257, |i| i * 3);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * 3);
        }
    }
}

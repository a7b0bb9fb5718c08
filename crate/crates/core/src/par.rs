//! Order-preserving parallel helpers with a sequential fallback.
//!
//! Every entry point maps over an index range or a slice and collects results
//! in input order, so outputs are bit-identical whether the `parallel`
//! feature is enabled or not. Work items must not share mutable state; RNG
//! consumers take a counter-based substream per item (see [`crate::rng`]).

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<S, F>(n: usize, f: F) -> Vec<S>
where
    S: Send,
    F: Fn(usize) -> S + Sync + Send,
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

/// Sequential twin of [`map_indexed`]. Exists so benchmarks can compare the
/// two paths inside one build; library code should call [`map_indexed`].
pub fn map_indexed_seq<S, F>(n: usize, f: F) -> Vec<S>
where
    F: Fn(usize) -> S,
{
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, returning results in slice order.
pub fn map_slice<T, S, F>(items: &[T], f: F) -> Vec<S>
where
    T: Sync,
    S: Send,
    F: Fn(&T) -> S + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

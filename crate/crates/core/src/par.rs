//! Row-level data parallelism for grid loops.
//!
//! Every stencil loop in the crate goes through [`for_each_row`] and every
//! reduction through [`sum_rows`]. With the `parallel` feature the rows are
//! distributed over the rayon pool once the grid is large enough; without it
//! (or after [`set_parallel(false)`](set_parallel)) the same closures run
//! sequentially. Reductions always add per-row partial sums in row order, so
//! results are bit-identical between the two paths and across thread counts.

use std::sync::atomic::{AtomicBool, Ordering};

static ENABLED: AtomicBool = AtomicBool::new(true);

/// Below this many values a loop is always run sequentially.
pub const MIN_PARALLEL_LEN: usize = 4096;

/// Runtime switch for the parallel path. Has no effect when the crate is
/// built without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    ENABLED.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::Relaxed)
}

/// Calls `f(row_index, row)` for each `row_len`-sized chunk of `data`.
pub fn for_each_row<F>(data: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() && data.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        data.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(j, row)| f(j, row));
        return;
    }
    data.chunks_mut(row_len)
        .enumerate()
        .for_each(|(j, row)| f(j, row));
}

/// Deterministic sum of `f(row)` over `rows` rows; `row_len` only sizes the
/// parallel threshold.
pub fn sum_rows<F>(rows: usize, row_len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(not(feature = "parallel"))]
    let _ = row_len;
    #[cfg(feature = "parallel")]
    if parallel_enabled() && rows * row_len >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        let partial: Vec<f64> = (0..rows).into_par_iter().map(&f).collect();
        return partial.iter().sum();
    }
    (0..rows).map(f).sum()
}

/// Maps `f` over `0..n` and collects in order; used for independent work
/// items such as field components or verification solves.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

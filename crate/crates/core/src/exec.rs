//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) `Execution::Parallel` fans work out
//! over the rayon pool; without it every call runs on the current thread.
//! Results always come back in index order, so output never depends on the
//! schedule.

use nalgebra::DMatrixViewMut;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Fills `out[i] = f(i)` for every row chunk of width `width`.
pub fn fill_rows<F>(exec: Execution, out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            out.par_chunks_mut(width)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
        }
        _ => out
            .chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row)),
    }
}

/// Columns handed to each task by [`column_blocks`].
pub const COLUMN_BLOCK: usize = 64;

/// Calls `f(first_column, block)` on consecutive column blocks of a
/// column-major `nrows x ncols` matrix stored in `data`.
pub fn column_blocks<F>(exec: Execution, data: &mut [f64], nrows: usize, f: F)
where
    F: Fn(usize, DMatrixViewMut<'_, f64>) + Sync + Send,
{
    if nrows == 0 {
        return;
    }
    let chunk = nrows * COLUMN_BLOCK;
    let run = |(k, block): (usize, &mut [f64])| {
        let cols = block.len() / nrows;
        f(k * COLUMN_BLOCK, DMatrixViewMut::from_slice(block, nrows, cols))
    };
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk).enumerate().for_each(run);
        }
        _ => data.chunks_mut(chunk).enumerate().for_each(run),
    }
}

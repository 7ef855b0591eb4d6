//! Row-parallel mapping with a deterministic, index-ordered result.
//!
//! Each row's computation is independent and outputs are collected by index,
//! so the parallel and sequential paths produce identical values; the
//! sequential path exists for bit-reproducibility guarantees in tests and for
//! builds without the `parallel` feature.

use crate::ExecMode;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub(crate) fn map_indexed<T, S>(
    n: usize,
    exec: ExecMode,
    init: impl Fn() -> S + Sync + Send,
    f: impl Fn(&mut S, usize) -> T + Sync + Send,
) -> Vec<T>
where
    T: Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec == ExecMode::Parallel {
            return (0..n)
                .into_par_iter()
                .map_init(&init, |state, i| f(state, i))
                .collect();
        }
    }
    let _ = exec;
    let mut state = init();
    (0..n).map(|i| f(&mut state, i)).collect()
}

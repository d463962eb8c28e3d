//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper produces results in index order and reduces in a fixed
//! chunk order, so the output is bit-identical whichever execution mode is
//! selected and however many worker threads are available.

/// How data-parallel inner loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, and
    /// silently falls back to sequential execution otherwise.
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(i)` for `i in 0..n` and returns the results in order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps every item of a slice, preserving order.
pub fn map_slice<S, T, F>(exec: Execution, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(exec, items.len(), |i| f(&items[i]))
}

/// Number of fixed reduction chunks used by [`sum_vectors`].
const REDUCE_CHUNKS: usize = 64;

/// Sums `f(i)` over `i in 0..n`, where each `f(i)` is a vector of length
/// `len`. Work is split into fixed contiguous chunks that are summed in
/// chunk order, so the floating-point result does not depend on scheduling.
pub fn sum_vectors<F>(exec: Execution, n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut Vec<f64>) + Sync + Send,
{
    let chunks = REDUCE_CHUNKS.min(n.max(1));
    let per = n.div_ceil(chunks);
    let partial = map_indexed(exec, chunks, |c| {
        let mut acc = vec![0.0; len];
        let mut scratch = Vec::with_capacity(len);
        for i in (c * per)..((c + 1) * per).min(n) {
            scratch.clear();
            f(i, &mut scratch);
            for (a, v) in acc.iter_mut().zip(&scratch) {
                *a += *v;
            }
        }
        acc
    });
    let mut total = vec![0.0; len];
    for p in partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

//! Execution-mode switch for the data-parallel inner loops.
//!
//! Batch work (fuzz suites, brute-force grids, instance sweeps) maps an index
//! range to results. With the `parallel` feature enabled the parallel mode
//! fans the map out over rayon; results are collected in index order and all
//! reductions happen sequentially afterwards, so values are bit-identical to
//! the sequential mode regardless of thread count. Without the feature,
//! `Parallel` silently falls back to sequential.

/// How to run a batch map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Plain sequential loop.
    #[default]
    Sequential,
    /// Rayon data-parallel map (order-preserving collect).
    Parallel,
}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn batch_map<T, F>(n: usize, mode: ExecMode, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        ExecMode::Parallel => parallel_map(n, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_elementwise() {
        let seq = batch_map(100, ExecMode::Sequential, |i| (i as f64).sqrt());
        let par = batch_map(100, ExecMode::Parallel, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
    }
}

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How index-parallel loops are executed.
///
/// `Parallel` silently degrades to sequential execution when the crate is
/// built without the `parallel` feature. Output order never depends on the
/// mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps over fixed-size chunks of `0..n` and returns the per-chunk
    /// results in chunk order.
    pub fn map_chunks<T, F>(self, n: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let count = n.div_ceil(chunk);
        self.map(count, |c| f(c * chunk..((c + 1) * chunk).min(n)))
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Sizes the global worker pool. Has no effect without the `parallel`
/// feature, and fails if the pool was already initialized.
pub fn set_threads(threads: usize) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| crate::Error::InvalidInput(format!("cannot size the worker pool: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = Execution::Sequential.map(1000, f);
        let b = Execution::Parallel.map(1000, f);
        assert_eq!(a, b);
    }

    #[test]
    fn chunks_cover_range() {
        let sums = Execution::Parallel.map_chunks(103, 10, |r| r.len());
        assert_eq!(sums.len(), 11);
        assert_eq!(sums.iter().sum::<usize>(), 103);
    }
}

//! Bounded worker pool for the core [`Executor`] interface.

use rayon::prelude::*;
use vesselatlas_core::exec::Executor;

pub struct PoolExecutor {
    pool: rayon::ThreadPool,
}

impl PoolExecutor {
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
        Ok(PoolExecutor { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for PoolExecutor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_input_order() {
        let items: Vec<u64> = (0..100).collect();
        for workers in [1, 3] {
            let ex = PoolExecutor::new(workers).unwrap();
            assert_eq!(ex.workers(), workers);
            let out = ex.map(&items, |i, x| i as u64 * 1000 + x * x);
            assert_eq!(out, items.iter().map(|x| x * 1000 + x * x).collect::<Vec<_>>());
        }
    }
}

//! Thread-pool path executor.

use paraxial_core::ensemble::PathExecutor;
use rayon::prelude::*;

/// Runs ensemble chunks on a dedicated rayon pool. Chunk results come back in
/// chunk order, so reductions see the same sequence for any worker count.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
        Ok(RayonExecutor { pool })
    }
}

impl PathExecutor for RayonExecutor {
    fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    fn map_chunks<T, F>(&self, n_chunks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n_chunks).into_par_iter().with_max_len(1).map(f).collect())
    }
}

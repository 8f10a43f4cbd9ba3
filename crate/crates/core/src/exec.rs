//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::map`] runs on the rayon
//! pool; without it, or with [`Execution::sequential`], it is a plain
//! iterator map. Both return results in input order.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Execution {
    parallel: bool,
    workers: Option<usize>,
}

impl Default for Execution {
    fn default() -> Self {
        Execution { parallel: cfg!(feature = "parallel"), workers: None }
    }
}

impl Execution {
    pub fn sequential() -> Self {
        Execution { parallel: false, workers: None }
    }

    pub fn parallel() -> Self {
        Execution { parallel: true, workers: None }
    }

    /// Caps the number of worker threads. `1` is equivalent to sequential.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers.max(1));
        if workers <= 1 {
            self.parallel = false;
        }
        self
    }

    pub fn is_parallel(&self) -> bool {
        self.parallel && cfg!(feature = "parallel")
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel {
            use rayon::prelude::*;
            let run = || items.par_iter().map(&f).collect();
            return match self.workers {
                Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    Ok(pool) => pool.install(run),
                    Err(e) => {
                        log::warn!("cannot build a {n}-thread pool ({e}); using the global pool");
                        run()
                    }
                },
                None => run(),
            };
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x * x + 1;
        let seq = Execution::sequential().map(&items, f);
        assert_eq!(seq, Execution::parallel().map(&items, f));
        assert_eq!(seq, Execution::parallel().with_workers(3).map(&items, f));
        assert_eq!(seq[10], 101);
        assert!(!Execution::parallel().with_workers(1).is_parallel());
    }
}

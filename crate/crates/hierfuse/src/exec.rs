use hierfuse_core::train::Executor;
use rayon::prelude::*;

use crate::error::{CliError, Result};

pub const THREADS_VAR: &str = "HIERFUSE_THREADS";

/// Runs per-video jobs on a rayon pool. Results come back in index order, so
/// reductions over them are independent of the thread count.
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    /// `threads = None` uses the machine's parallelism.
    pub fn new(threads: Option<usize>) -> Result<Self> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(CliError::runtime)?;
        Ok(Parallel { pool })
    }

    /// Honors `HIERFUSE_THREADS` when set.
    pub fn from_env() -> Result<Self> {
        Self::new(threads_from(std::env::var(THREADS_VAR).ok().as_deref())?)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

fn threads_from(value: Option<&str>) -> Result<Option<usize>> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_VAR} must be a positive integer, got `{s}`"))),
        },
    }
}

impl Executor for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_thread_counts() {
        assert_eq!(threads_from(None).unwrap(), None);
        assert_eq!(threads_from(Some(" 3 ")).unwrap(), Some(3));
        assert!(threads_from(Some("0")).is_err());
        assert!(threads_from(Some("many")).is_err());
    }

    #[test]
    fn keeps_index_order() {
        let exec = Parallel::new(Some(3)).unwrap();
        assert_eq!(exec.threads(), 3);
        assert_eq!(exec.map(50, |i| i * i), (0..50).map(|i| i * i).collect::<Vec<_>>());
    }
}

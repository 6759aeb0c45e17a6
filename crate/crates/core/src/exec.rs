//! Serial or pinned-worker parallel execution of chunked batch work.

use std::fmt;
use std::sync::Arc;

use rayon::{ThreadPool, ThreadPoolBuilder};

/// Particles (or rollouts) per RNG chunk. Fixed so that chunk boundaries, and
/// therefore random streams, never depend on the worker count.
pub const CHUNK_SIZE: usize = 512;

#[derive(Clone, Default)]
pub enum Execution {
    #[default]
    Serial,
    Parallel(Arc<ThreadPool>),
}

impl fmt::Debug for Execution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Serial => f.write_str("Serial"),
            Self::Parallel(p) => write!(f, "Parallel({} workers)", p.current_num_threads()),
        }
    }
}

impl Execution {
    /// Parallel execution on a dedicated pool; `None` uses one worker per
    /// available hardware thread.
    pub fn parallel(workers: Option<usize>) -> Self {
        let n = workers.unwrap_or_else(available_threads).max(1);
        let pool = ThreadPoolBuilder::new()
            .num_threads(n)
            .thread_name(|i| format!("hpred-worker-{i}"))
            .build()
            .expect("failed to build worker pool");
        Self::Parallel(Arc::new(pool))
    }

    pub fn workers(&self) -> usize {
        match self {
            Self::Serial => 1,
            Self::Parallel(p) => p.current_num_threads(),
        }
    }

    pub fn is_parallel(&self) -> bool {
        matches!(self, Self::Parallel(_))
    }

    /// Runs `op` inside the pool (or directly when serial).
    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        match self {
            Self::Serial => op(),
            Self::Parallel(p) => p.install(op),
        }
    }
}

pub fn available_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

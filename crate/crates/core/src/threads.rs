//! Worker pool sizing. `COGT_THREADS` caps every pool this crate creates.

use rayon::{ThreadPool, ThreadPoolBuilder};

pub const THREADS_ENV: &str = "COGT_THREADS";

/// Thread count from `COGT_THREADS`, else the machine's parallelism.
pub fn thread_count() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => available,
    }
}

pub fn worker_pool() -> ThreadPool {
    ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .expect("thread pool")
}

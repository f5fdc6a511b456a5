//! Dataset collection, two-phase multi-task training, evaluation and
//! end-to-end run orchestration on top of the solver and the model.

pub mod collect;
pub mod dataset;
pub mod train;
pub mod eval;
pub mod report;
pub mod runspec;

/// Environment variable capping per-stage worker threads.
pub const THREADS_ENV: &str = "MILPMT_THREADS";

/// Mixes a master seed with a stream tag (splitmix64 finalizer).
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Worker count from `MILPMT_THREADS`, else the machine's parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f(index, item)` over `items` on a bounded pool; results come back in
/// input order whatever the scheduling.
pub fn par_map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync,
{
    use rayon::prelude::*;
    let threads = worker_threads();
    if threads <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()),
        Err(_) => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
    }
}

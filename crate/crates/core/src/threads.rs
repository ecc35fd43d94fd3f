//! Internal parallelism control.
//!
//! Parallel sections only ever partition work across disjoint output regions;
//! every reduction runs sequentially inside one task. Results are therefore
//! bitwise identical for any thread count, and `set_threads(1)` simply forces
//! the sequential path.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

static REQUESTED: AtomicUsize = AtomicUsize::new(0);
static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

/// Set the worker count before any compute runs. 0 means "use all cores".
pub fn set_threads(n: usize) {
    REQUESTED.store(n, Ordering::SeqCst);
}

pub fn threads() -> usize {
    let req = REQUESTED.load(Ordering::SeqCst);
    if req == 0 {
        std::thread::available_parallelism().map(|v| v.get()).unwrap_or(1)
    } else {
        req
    }
}

fn pool() -> Option<&'static rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let n = threads();
        if n <= 1 {
            None
        } else {
            rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()
        }
    })
    .as_ref()
}

/// Run `job(chunk_index, out_chunk)` over disjoint chunks of `out`,
/// in parallel when a pool is configured. `job` must not depend on
/// execution order; each chunk is written by exactly one task.
pub fn for_each_chunk<T: Send, F>(out: &mut [T], chunk: usize, job: F)
where
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk > 0);
    match pool() {
        Some(p) if out.len() > chunk => {
            use rayon::prelude::*;
            p.install(|| {
                out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| job(i, c));
            });
        }
        _ => {
            for (i, c) in out.chunks_mut(chunk).enumerate() {
                job(i, c);
            }
        }
    }
}

//! Process-wide worker-thread configuration.
//!
//! Hot loops that fan out over filters or batch elements consult
//! [`worker_threads`]. Results are always reduced in a fixed index order, so
//! the numeric output is identical for every thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

static WORKERS: AtomicUsize = AtomicUsize::new(1);

/// Sets the number of worker threads used by batch and filter loops.
pub fn set_worker_threads(n: usize) {
    WORKERS.store(n.max(1), Ordering::Relaxed);
}

pub fn worker_threads() -> usize {
    WORKERS.load(Ordering::Relaxed)
}

/// Maps `f` over `0..n` and returns the results in index order, splitting
/// the range across the configured worker threads.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = worker_threads().min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (i, slot) in slot_chunk.iter_mut().enumerate() {
                    *slot = Some(f(w * chunk + i));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

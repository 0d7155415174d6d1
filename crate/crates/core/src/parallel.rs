//! Scoped data parallelism over disjoint output chunks.

use std::num::NonZeroUsize;

/// Worker threads: `DSEG_THREADS` if set to a positive integer, otherwise the
/// available hardware parallelism.
pub fn worker_count() -> usize {
    std::env::var("DSEG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<NonZeroUsize>().ok())
        .or_else(|| std::thread::available_parallelism().ok())
        .map_or(1, NonZeroUsize::get)
}

/// Calls `f(item_index, chunk)` for each `item_len`-sized chunk of `out`,
/// spreading contiguous runs of items over the worker threads.
pub(crate) fn for_each_item<T: Send>(out: &mut [T], item_len: usize, f: impl Fn(usize, &mut [T]) + Sync) {
    if item_len == 0 {
        return;
    }
    let items = out.len() / item_len;
    let workers = worker_count().min(items).max(1);
    if workers == 1 {
        for (i, chunk) in out.chunks_mut(item_len).enumerate() {
            f(i, chunk);
        }
        return;
    }
    let per = items.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, block) in out.chunks_mut(per * item_len).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (i, chunk) in block.chunks_mut(item_len).enumerate() {
                    f(w * per + i, chunk);
                }
            });
        }
    });
}

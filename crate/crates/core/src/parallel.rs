//! Row-band work splitting on scoped threads.
//!
//! Every caller computes each output element from inputs only, so the split
//! never changes results; worker count affects wall time alone.

use std::thread;

/// Split `out` (row-major, `row_len` elements per row) into at most `workers`
/// contiguous bands of whole rows and run `f(first_row, band)` on each.
pub(crate) fn for_each_row_band<T, F>(out: &mut [T], row_len: usize, workers: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    if out.is_empty() || row_len == 0 {
        return;
    }
    let rows = out.len() / row_len;
    let workers = workers.clamp(1, rows.max(1));
    if workers == 1 {
        f(0, out);
        return;
    }
    let rows_per_band = rows.div_ceil(workers);
    thread::scope(|scope| {
        for (band_idx, band) in out.chunks_mut(rows_per_band * row_len).enumerate() {
            let f = &f;
            scope.spawn(move || f(band_idx * rows_per_band, band));
        }
    });
}

/// Map `items` to outputs on up to `workers` threads, preserving order.
pub(crate) fn map_ordered<I, O, F>(items: &[I], workers: usize, f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let per = items.len().div_ceil(workers);
    thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|chunk| {
                let f = &f;
                scope.spawn(move || chunk.iter().map(f).collect::<Vec<O>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Default worker count: available hardware parallelism.
pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

//! Element-level allocation accounting.
//!
//! Every [`Tensor`](crate::Tensor) and every scratch buffer handed out by
//! [`buffer`] is recorded in a thread-local counter. [`measure`] scopes the
//! counter around a closure, which lets tests assert that a kernel never
//! materializes an intermediate of a given size.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AllocStats {
    /// Number of recorded allocations.
    pub count: usize,
    /// Sum of all recorded lengths, in `f64` elements.
    pub elements: usize,
    /// Largest single allocation, in `f64` elements.
    pub largest: usize,
}

impl AllocStats {
    fn merge(self, other: AllocStats) -> AllocStats {
        AllocStats {
            count: self.count + other.count,
            elements: self.elements + other.elements,
            largest: self.largest.max(other.largest),
        }
    }
}

thread_local! {
    static STATS: Cell<AllocStats> = const { Cell::new(AllocStats { count: 0, elements: 0, largest: 0 }) };
}

pub(crate) fn record(len: usize) {
    STATS.with(|s| {
        let mut v = s.get();
        v.count += 1;
        v.elements += len;
        v.largest = v.largest.max(len);
        s.set(v);
    });
}

/// Zero-filled scratch buffer that is counted like a tensor.
pub(crate) fn buffer(len: usize) -> Vec<f64> {
    record(len);
    vec![0.0; len]
}

/// Runs `f` and returns what it allocated on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, AllocStats) {
    let outer = STATS.with(|s| s.replace(AllocStats::default()));
    let out = f();
    let inner = STATS.with(|s| s.get());
    STATS.with(|s| s.set(outer.merge(inner)));
    (out, inner)
}

/// Totals recorded on this thread since it started.
pub fn snapshot() -> AllocStats {
    STATS.with(|s| s.get())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_measure_reports_only_inner_work() {
        let (_, outer) = measure(|| {
            let _a = buffer(10);
            let (_, inner) = measure(|| buffer(3));
            assert_eq!(inner.elements, 3);
            assert_eq!(inner.count, 1);
        });
        assert_eq!(outer.elements, 13);
        assert_eq!(outer.largest, 10);
    }
}

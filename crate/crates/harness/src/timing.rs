//! Wall-clock summaries.

use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Median and quartiles of repeated measurements, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub repeats: usize,
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    /// Panics on an empty slice.
    pub fn of(samples: &[f64]) -> Self {
        assert!(!samples.is_empty(), "no samples to summarize");
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Summary {
            median: quantile(&s, 0.5),
            q1: quantile(&s, 0.25),
            q3: quantile(&s, 0.75),
            min: s[0],
            max: s[s.len() - 1],
            repeats: s.len(),
        }
    }
}

pub fn time<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Runs every closure `warmup` times, then `repeats` rounds in which each
/// closure runs once. Interleaving keeps slow drift from biasing one variant.
pub fn time_interleaved(warmup: usize, repeats: usize, fs: &mut [&mut dyn FnMut()]) -> Vec<Summary> {
    for _ in 0..warmup {
        fs.iter_mut().for_each(|f| f());
    }
    let mut samples = vec![Vec::with_capacity(repeats); fs.len()];
    for _ in 0..repeats {
        for (f, s) in fs.iter_mut().zip(samples.iter_mut()) {
            s.push(time(|| f()).1);
        }
    }
    samples.iter().map(|s| Summary::of(s)).collect()
}

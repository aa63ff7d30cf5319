//! Extension overhead and per-sample gradient benchmarks.

use anyhow::{ensure, Result};
use gradpack_core::zoo::{ModelKind, ModelSpec};
use gradpack_core::{backward, for_loop_batch_grad, forward_cached, BackwardConfig, Extension, Network, Targets, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::timing::{time_interleaved, Summary};

/// Inputs uniform in `[0, 1)` and uniform labels for a model's input shape.
pub fn random_batch(net: &Network, n: usize, seed: u64) -> (Tensor, Targets) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![n];
    shape.extend_from_slice(net.input_shape());
    let x = Tensor::from_fn(&shape, |_| rng.random::<f64>());
    let c = net.classes();
    let y = (0..n).map(|_| rng.random_range(0..c)).collect();
    (x, Targets::Labels(y))
}

fn pass(net: &Network, x: &Tensor, y: &Targets, cfg: &BackwardConfig) -> f64 {
    let state = forward_cached(net, x, y).expect("benchmark forward");
    backward(net, state, cfg).expect("benchmark backward").loss
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadConfig {
    pub model: String,
    pub classes: usize,
    pub batch_size: usize,
    pub extensions: Vec<String>,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadTimings {
    /// Forward plus backward computing only the gradient.
    pub gradient: Summary,
    pub with_extensions: Summary,
    /// Ratio of medians, `with_extensions / gradient`.
    pub ratio: f64,
    /// `N` separate size-one passes, measured when BatchGrad is requested.
    pub for_loop: Option<Summary>,
    pub for_loop_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadResult {
    pub num_params: usize,
    pub loss: f64,
    pub timings: OverheadTimings,
}

pub fn bench_overhead(cfg: &OverheadConfig) -> Result<OverheadResult> {
    ensure!(cfg.repeats >= 1, "repeats must be at least 1");
    ensure!(cfg.batch_size >= 1, "batch size must be at least 1");
    let kind: ModelKind = cfg.model.parse()?;
    let exts = cfg
        .extensions
        .iter()
        .map(|e| e.parse::<Extension>())
        .collect::<gradpack_core::Result<Vec<_>>>()?;
    let net = ModelSpec::desk(kind, cfg.classes).build(cfg.seed)?;
    let (x, y) = random_batch(&net, cfg.batch_size, cfg.seed.wrapping_add(1));
    let plain = BackwardConfig::default();
    let full = BackwardConfig::with(&exts).seed(cfg.seed);
    // Fail before timing if an extension is unsupported.
    let loss = backward(&net, forward_cached(&net, &x, &y)?, &full)?.loss;

    let mut grad_only = || {
        pass(&net, &x, &y, &plain);
    };
    let mut extended = || {
        pass(&net, &x, &y, &full);
    };
    let mut looped = || {
        for_loop_batch_grad(&net, &x, &y).expect("for-loop pass");
    };
    // Without extensions both variants are the same pass, measured once.
    let mut fs: Vec<&mut dyn FnMut()> = vec![&mut grad_only];
    if !exts.is_empty() {
        fs.push(&mut extended);
    }
    let with_loop = exts.contains(&Extension::BatchGrad);
    if with_loop {
        fs.push(&mut looped);
    }
    let mut s = time_interleaved(cfg.warmup, cfg.repeats, &mut fs).into_iter();
    let gradient = s.next().expect("gradient timing");
    let with_extensions = if exts.is_empty() {
        gradient.clone()
    } else {
        s.next().expect("extension timing")
    };
    let for_loop = s.next();
    let ratio = with_extensions.median / gradient.median;
    let for_loop_ratio = for_loop.as_ref().map(|f| f.median / gradient.median);
    Ok(OverheadResult {
        num_params: net.num_params(),
        loss,
        timings: OverheadTimings {
            gradient,
            with_extensions,
            ratio,
            for_loop,
            for_loop_ratio,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchGradConfig {
    pub model: String,
    pub classes: usize,
    pub batch_sizes: Vec<usize>,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchGradTimings {
    pub vectorized: Summary,
    pub for_loop: Summary,
    /// `for_loop / vectorized`, ratio of medians.
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchGradRow {
    pub batch_size: usize,
    pub loss: f64,
    /// Largest entry-wise gap between the two per-sample gradient computations.
    pub max_abs_diff: f64,
    pub timings: BatchGradTimings,
}

pub fn bench_batchgrad(cfg: &BatchGradConfig) -> Result<Vec<BatchGradRow>> {
    ensure!(cfg.repeats >= 1, "repeats must be at least 1");
    ensure!(!cfg.batch_sizes.is_empty(), "no batch sizes given");
    let kind: ModelKind = cfg.model.parse()?;
    let net = ModelSpec::desk(kind, cfg.classes).build(cfg.seed)?;
    let bcfg = BackwardConfig::with(&[Extension::BatchGrad]);
    let mut rows = Vec::new();
    for &n in &cfg.batch_sizes {
        ensure!(n >= 1, "batch size must be at least 1");
        let (x, y) = random_batch(&net, n, cfg.seed.wrapping_add(n as u64));
        let out = backward(&net, forward_cached(&net, &x, &y)?, &bcfg)?;
        let looped = for_loop_batch_grad(&net, &x, &y)?;
        let mut max_abs_diff = 0.0f64;
        for (b, l) in out.blocks.iter().zip(&looped) {
            let v = b.first.batch_grad.as_ref().expect("requested");
            max_abs_diff = max_abs_diff.max(v.max_abs_diff(l)?);
        }
        let mut vec_f = || {
            pass(&net, &x, &y, &bcfg);
        };
        let mut loop_f = || {
            for_loop_batch_grad(&net, &x, &y).expect("for-loop pass");
        };
        let s = time_interleaved(cfg.warmup, cfg.repeats, &mut [&mut vec_f, &mut loop_f]);
        rows.push(BatchGradRow {
            batch_size: n,
            loss: out.loss,
            max_abs_diff,
            timings: BatchGradTimings {
                speedup: s[1].median / s[0].median,
                vectorized: s[0].clone(),
                for_loop: s[1].clone(),
            },
        });
    }
    Ok(rows)
}

//! Minibatch training with the damped preconditioner.

use std::collections::BTreeSet;

use anyhow::{ensure, Context, Result};
use gradpack_core::optimizer::{CurvatureKind, Optimizer, PreconditionerConfig};
use gradpack_core::zoo::{ModelKind, ModelSpec};
use gradpack_core::{Network, Targets};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;

/// Rows evaluated per forward pass when computing metrics.
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: String,
    pub data: String,
    pub curvature: String,
    /// Step size α.
    pub lr: f64,
    /// Damping λ.
    pub damping: f64,
    /// L2 regularization η.
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 is the untrained network.
    pub epoch: usize,
    /// Mean loss over the training split; `None` once it is not finite.
    pub train_loss: Option<f64>,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Completed,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub status: Status,
    /// Epoch during which a non-finite loss appeared.
    pub diverged_epoch: Option<usize>,
    pub steps: u64,
    pub epochs: Vec<EpochMetrics>,
    /// Distinct solver warnings, such as the π fallback.
    pub warnings: Vec<String>,
}

impl TrainResult {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("epoch 0 is always recorded")
    }

    /// Final validation accuracy of a completed run.
    pub fn final_val_accuracy(&self) -> Option<f64> {
        (self.status == Status::Completed).then(|| self.last().val_accuracy)
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Mean loss and accuracy over `rows`.
pub fn evaluate(net: &Network, data: &Dataset, rows: &[usize]) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in rows.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk);
        let out = net.forward(&x)?;
        let labels = match &y {
            Targets::Labels(l) => l,
            Targets::Values(_) => unreachable!("datasets carry labels"),
        };
        let eval = net.loss().evaluate(&out, &y)?;
        loss += eval.per_sample.iter().sum::<f64>();
        for (s, &label) in labels.iter().enumerate() {
            let row = out.row(s);
            let pred = (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best });
            correct += usize::from(pred == label);
        }
    }
    Ok((loss / rows.len() as f64, correct as f64 / rows.len() as f64))
}

fn metrics(net: &Network, data: &Dataset, epoch: usize) -> Result<EpochMetrics> {
    let (train_loss, train_accuracy) = evaluate(net, data, &data.train)?;
    let (val_loss, val_accuracy) = evaluate(net, data, &data.val)?;
    Ok(EpochMetrics {
        epoch,
        train_loss: finite(train_loss),
        train_accuracy,
        val_loss: finite(val_loss),
        val_accuracy,
    })
}

/// Zoo model sized for `data`'s input shape and class count.
pub fn build_model(model: &str, data: &Dataset, seed: u64) -> Result<Network> {
    let kind: ModelKind = model.parse()?;
    ModelSpec::desk(kind, data.classes)
        .with_input(data.sample_shape())
        .build(seed)
        .with_context(|| format!("model {model} on inputs of shape {:?}", data.sample_shape()))
}

/// Trains from the seed's initialization and reports metrics after every epoch.
///
/// A non-finite loss or parameter halts the run with [`Status::Diverged`].
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainResult> {
    ensure!(cfg.batch_size >= 1, "batch size must be at least 1");
    let curvature: CurvatureKind = cfg.curvature.parse()?;
    let pcfg = PreconditionerConfig::new(curvature, cfg.lr, cfg.damping, cfg.l2)?;
    let mut net = build_model(&cfg.model, data, cfg.seed)?;
    let mut opt = Optimizer::new(pcfg, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xB47C_5EED);
    let mut warnings = BTreeSet::new();
    let mut epochs = vec![metrics(&net, data, 0)?];
    let mut diverged_epoch = None;

    'outer: for epoch in 1..=cfg.epochs {
        let mut order = data.train.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk);
            match opt.step(&mut net, &x, &y) {
                Ok(info) if info.loss.is_finite() => warnings.extend(info.warnings),
                Ok(_) => {
                    diverged_epoch = Some(epoch);
                    break 'outer;
                }
                Err(e) => {
                    // Errors caused by overflowing activations count as divergence.
                    let blown = net.forward(&x).map_or(true, |o| o.data().iter().any(|v| !v.is_finite()));
                    if blown {
                        diverged_epoch = Some(epoch);
                        break 'outer;
                    }
                    return Err(e.into());
                }
            }
            if net.params_flat().iter().any(|v| !v.is_finite()) {
                diverged_epoch = Some(epoch);
                break 'outer;
            }
        }
        let m = metrics(&net, data, epoch)?;
        let bad = m.train_loss.is_none();
        epochs.push(m);
        if bad {
            diverged_epoch = Some(epoch);
            break;
        }
    }
    Ok(TrainResult {
        status: if diverged_epoch.is_some() {
            Status::Diverged
        } else {
            Status::Completed
        },
        diverged_epoch,
        steps: opt.steps(),
        epochs,
        warnings: warnings.into_iter().collect(),
    })
}

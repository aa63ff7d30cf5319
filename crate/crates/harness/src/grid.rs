//! Grid search over step size and damping, then reruns of the best cell.

use anyhow::{bail, ensure, Result};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::timing::Summary;
use crate::train::{train, Status, TrainConfig, TrainResult};

pub const DEFAULT_LR_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
pub const DEFAULT_DAMPING_GRID: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Template for every run; `lr`, `damping` and `seed` are overridden.
    pub base: TrainConfig,
    pub lr_grid: Vec<f64>,
    pub damping_grid: Vec<f64>,
    /// The first seed scores the grid; the best cell is rerun on all of them.
    pub seeds: Vec<u64>,
    /// Runs grid cells on worker threads. Results do not depend on this flag.
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub damping: f64,
    pub status: Status,
    /// `None` for diverged runs.
    pub final_train_loss: Option<f64>,
    pub final_val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub result: TrainResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Learning-rate-major order.
    pub cells: Vec<GridCell>,
    /// Index into `cells`; `None` when every cell diverged.
    pub best: Option<usize>,
    pub reruns: Vec<SeedRun>,
    /// Final validation accuracy of the completed reruns.
    pub rerun_val_accuracy: Option<Summary>,
}

/// Highest final validation accuracy among completed cells; ties keep the earliest.
pub fn pick_best(cells: &[GridCell]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if c.status != Status::Completed {
            continue;
        }
        if best.is_none_or(|b| c.final_val_accuracy > cells[b].final_val_accuracy) {
            best = Some(i);
        }
    }
    best
}

fn cell_config(base: &TrainConfig, lr: f64, damping: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        lr,
        damping,
        seed,
        ..base.clone()
    }
}

fn run_all(configs: &[TrainConfig], data: &Dataset, parallel: bool) -> Vec<Result<TrainResult>> {
    if !parallel {
        return configs.iter().map(|c| train(c, data)).collect();
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(configs.len().max(1));
    let mut out: Vec<Option<Result<TrainResult>>> = (0..configs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..configs.len())
                        .step_by(workers)
                        .map(|i| (i, train(&configs[i], data)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("grid worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every cell ran")).collect()
}

pub fn gridsearch(cfg: &GridConfig, data: &Dataset) -> Result<GridResult> {
    ensure!(!cfg.lr_grid.is_empty() && !cfg.damping_grid.is_empty(), "empty grid");
    let Some(&first_seed) = cfg.seeds.first() else {
        bail!("no seeds given");
    };
    let configs: Vec<TrainConfig> = cfg
        .lr_grid
        .iter()
        .flat_map(|&lr| cfg.damping_grid.iter().map(move |&d| (lr, d)))
        .map(|(lr, d)| cell_config(&cfg.base, lr, d, first_seed))
        .collect();
    let mut cells = Vec::with_capacity(configs.len());
    for (c, r) in configs.iter().zip(run_all(&configs, data, cfg.parallel)) {
        let r = r?;
        cells.push(GridCell {
            lr: c.lr,
            damping: c.damping,
            status: r.status,
            final_train_loss: r.last().train_loss.filter(|_| r.status == Status::Completed),
            final_val_accuracy: r.last().val_accuracy,
        });
    }
    let best = pick_best(&cells);
    let mut reruns = Vec::new();
    if let Some(b) = best {
        let configs: Vec<TrainConfig> = cfg
            .seeds
            .iter()
            .map(|&s| cell_config(&cfg.base, cells[b].lr, cells[b].damping, s))
            .collect();
        for (c, r) in configs.iter().zip(run_all(&configs, data, cfg.parallel)) {
            reruns.push(SeedRun {
                seed: c.seed,
                result: r?,
            });
        }
    }
    let accs: Vec<f64> = reruns.iter().filter_map(|r| r.result.final_val_accuracy()).collect();
    Ok(GridResult {
        cells,
        best,
        reruns,
        rerun_val_accuracy: (!accs.is_empty()).then(|| Summary::of(&accs)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(acc: f64, status: Status) -> GridCell {
        GridCell {
            lr: 0.1,
            damping: 1.0,
            status,
            final_train_loss: Some(1.0),
            final_val_accuracy: acc,
        }
    }

    #[test]
    fn best_skips_diverged_and_keeps_first_tie() {
        let cells = [
            cell(0.5, Status::Completed),
            cell(0.9, Status::Diverged),
            cell(0.7, Status::Completed),
            cell(0.7, Status::Completed),
        ];
        assert_eq!(pick_best(&cells), Some(2));
        assert_eq!(pick_best(&[cell(1.0, Status::Diverged)]), None);
        assert_eq!(pick_best(&[]), None);
    }
}

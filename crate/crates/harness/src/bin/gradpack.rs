use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use gradpack_harness::bench::{bench_batchgrad, bench_overhead, BatchGradConfig, OverheadConfig};
use gradpack_harness::data::DataSpec;
use gradpack_harness::grid::{gridsearch, GridConfig, DEFAULT_DAMPING_GRID, DEFAULT_LR_GRID};
use gradpack_harness::record::{write_batchgrad_csv, write_overhead_csv, RunRecord};
use gradpack_harness::train::{train, TrainConfig};

/// Per-sample statistics and curvature benchmarks, training and grid search.
#[derive(Parser)]
#[command(name = "gradpack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Timing benchmarks.
    #[command(subcommand)]
    Bench(Bench),
    /// Train a zoo model with the damped preconditioner.
    Train(TrainArgs),
    /// Tune step size and damping, then rerun the best cell over seeds.
    Gridsearch(GridArgs),
}

#[derive(Subcommand)]
enum Bench {
    /// Backward time with extensions relative to the plain gradient.
    Overhead(OverheadArgs),
    /// Vectorized per-sample gradients against one pass per sample.
    Batchgrad(BatchGradArgs),
}

#[derive(Args)]
struct Output {
    /// JSON record path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Output {
    fn emit(&self, record: &RunRecord) -> Result<()> {
        match &self.out {
            Some(p) => record.write(p),
            None => {
                println!("{}", record.to_json()?);
                Ok(())
            }
        }
    }
}

#[derive(Args)]
struct OverheadArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Comma-separated extensions, e.g. `batchl2,variance`. Empty for none.
    #[arg(long, value_delimiter = ',', default_value = "")]
    ext: Vec<String>,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the timing table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct BatchGradArgs {
    #[arg(long)]
    model: String,
    #[arg(long, value_delimiter = ',', default_value = "1,8,32,128")]
    batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    model: String,
    /// `idx:<images>,<labels>` or `blobs:<C>,<d>,<k>`.
    #[arg(long)]
    data: DataSpec,
    /// diagggn, diagggn-mc, kfac, kflr or kfra.
    #[arg(long)]
    curvature: String,
    /// L2 regularization η.
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Seed for synthetic data and the train/validation split.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

impl Common {
    fn config(&self, lr: f64, damping: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            data: self.data.to_string(),
            curvature: self.curvature.clone(),
            lr,
            damping,
            l2: self.l2,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Step size α.
    #[arg(long)]
    lr: f64,
    /// Damping λ.
    #[arg(long)]
    damping: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    lr_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    damping_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Run grid cells on worker threads.
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    out: Output,
}

#[derive(serde::Serialize)]
struct DataRecord<'a, T> {
    data_seed: u64,
    #[serde(flatten)]
    inner: &'a T,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Bench(Bench::Overhead(a)) => {
            let cfg = OverheadConfig {
                model: a.model,
                classes: a.classes,
                batch_size: a.batch_size,
                extensions: a.ext.into_iter().filter(|e| !e.is_empty()).collect(),
                repeats: a.repeats,
                warmup: a.warmup,
                seed: a.seed,
            };
            let res = bench_overhead(&cfg)?;
            if let Some(p) = &a.csv {
                write_overhead_csv(p, &cfg, &res)?;
            }
            a.out.emit(&RunRecord::new("bench overhead", &cfg, &res)?)
        }
        Command::Bench(Bench::Batchgrad(a)) => {
            let cfg = BatchGradConfig {
                model: a.model,
                classes: a.classes,
                batch_sizes: a.batch_sizes,
                repeats: a.repeats,
                warmup: a.warmup,
                seed: a.seed,
            };
            let rows = bench_batchgrad(&cfg)?;
            if let Some(p) = &a.csv {
                write_batchgrad_csv(p, &cfg.model, &rows)?;
            }
            a.out.emit(&RunRecord::new("bench batchgrad", &cfg, &rows)?)
        }
        Command::Train(a) => {
            let data = a.common.data.load(a.common.data_seed)?;
            let cfg = a.common.config(a.lr, a.damping, a.seed);
            let res = train(&cfg, &data)?;
            let config = DataRecord {
                data_seed: a.common.data_seed,
                inner: &cfg,
            };
            a.out.emit(&RunRecord::new("train", &config, &res)?)
        }
        Command::Gridsearch(a) => {
            let data = a.common.data.load(a.common.data_seed)?;
            let cfg = GridConfig {
                base: a.common.config(0.0, 0.0, 0),
                lr_grid: a.lr_grid.unwrap_or_else(|| DEFAULT_LR_GRID.to_vec()),
                damping_grid: a.damping_grid.unwrap_or_else(|| DEFAULT_DAMPING_GRID.to_vec()),
                seeds: a.seeds,
                parallel: a.parallel,
            };
            let res = gridsearch(&cfg, &data)?;
            let config = DataRecord {
                data_seed: a.common.data_seed,
                inner: &cfg,
            };
            a.out.emit(&RunRecord::new("gridsearch", &config, &res)?)
        }
    }
}

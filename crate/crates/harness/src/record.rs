//! JSON run records and CSV timing tables.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bench::{BatchGradRow, OverheadConfig, OverheadResult};
use crate::timing::Summary;

pub const SCHEMA_VERSION: &str = "1";

/// `{schema_version, command, config, results}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: String,
    pub command: String,
    pub config: Value,
    pub results: Value,
}

impl RunRecord {
    pub fn new(command: &str, config: &impl Serialize, results: &impl Serialize) -> Result<Self> {
        Ok(RunRecord {
            schema_version: SCHEMA_VERSION.into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            results: serde_json::to_value(results)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: RunRecord = serde_json::from_str(s)?;
        ensure!(
            r.schema_version == SCHEMA_VERSION,
            "unsupported schema version {:?}",
            r.schema_version
        );
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&s)
    }

    /// `results` with every `timings` object removed, recursively.
    pub fn results_without_timings(&self) -> Value {
        fn strip(v: &Value) -> Value {
            match v {
                Value::Object(m) => Value::Object(
                    m.iter()
                        .filter(|(k, _)| k.as_str() != "timings")
                        .map(|(k, v)| (k.clone(), strip(v)))
                        .collect(),
                ),
                Value::Array(a) => Value::Array(a.iter().map(strip).collect()),
                other => other.clone(),
            }
        }
        strip(&self.results)
    }
}

#[derive(Debug, Serialize)]
struct TimingRow<'a> {
    model: &'a str,
    batch_size: usize,
    variant: &'a str,
    repeats: usize,
    median_s: f64,
    q1_s: f64,
    q3_s: f64,
    min_s: f64,
    max_s: f64,
    ratio: f64,
}

fn row<'a>(model: &'a str, n: usize, variant: &'a str, s: &Summary, ratio: f64) -> TimingRow<'a> {
    TimingRow {
        model,
        batch_size: n,
        variant,
        repeats: s.repeats,
        median_s: s.median,
        q1_s: s.q1,
        q3_s: s.q3,
        min_s: s.min,
        max_s: s.max,
        ratio,
    }
}

fn write_rows(path: &Path, rows: &[TimingRow<'_>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per measured variant; `ratio` is relative to the gradient-only pass.
pub fn write_overhead_csv(path: &Path, cfg: &OverheadConfig, res: &OverheadResult) -> Result<()> {
    let t = &res.timings;
    let n = cfg.batch_size;
    let mut rows = vec![
        row(&cfg.model, n, "gradient", &t.gradient, 1.0),
        row(&cfg.model, n, "with_extensions", &t.with_extensions, t.ratio),
    ];
    if let (Some(f), Some(r)) = (&t.for_loop, t.for_loop_ratio) {
        rows.push(row(&cfg.model, n, "for_loop", f, r));
    }
    write_rows(path, &rows)
}

/// Two rows per batch size; `ratio` is relative to the vectorized pass.
pub fn write_batchgrad_csv(path: &Path, model: &str, rows: &[BatchGradRow]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        let t = &r.timings;
        out.push(row(model, r.batch_size, "vectorized", &t.vectorized, 1.0));
        out.push(row(model, r.batch_size, "for_loop", &t.for_loop, t.speedup));
    }
    write_rows(path, &out)
}

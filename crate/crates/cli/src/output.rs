//! Aggregate tables and the files a command leaves in its output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use dtstream::streams::{MetricSummary, Task};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiment::{RunInfo, RunOutcome};

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `NaN` for an empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub metric: String,
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
    /// Runs with a finite value.
    pub n: usize,
}

impl AggregateRow {
    fn over(metric: &str, values: &[f64]) -> Self {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        let mean = if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        };
        Self {
            metric: metric.into(),
            mean,
            q05: quantile(&v, 0.05),
            q95: quantile(&v, 0.95),
            n: v.len(),
        }
    }
}

pub fn metric_names(task: Task) -> &'static [&'static str] {
    match task {
        Task::Regression => &["rmse", "mean_density"],
        Task::Classification => &["error_rate", "ccr", "auc", "mean_density"],
    }
}

pub fn metric_value(s: &MetricSummary, name: &str) -> f64 {
    match name {
        "rmse" => s.rmse,
        "mean_density" => s.mean_density,
        "ccr" => s.ccr,
        "error_rate" => 1.0 - s.ccr,
        "auc" => s.auc,
        _ => f64::NAN,
    }
}

/// One row per metric over the runs' summaries.
pub fn aggregate(task: Task, runs: &[RunOutcome]) -> Vec<AggregateRow> {
    metric_names(task)
        .iter()
        .map(|m| {
            let v: Vec<f64> = runs.iter().map(|r| metric_value(&r.summary, m)).collect();
            AggregateRow::over(m, &v)
        })
        .collect()
}

pub fn find<'a>(rows: &'a [AggregateRow], metric: &str) -> Option<&'a AggregateRow> {
    rows.iter().find(|r| r.metric == metric)
}

pub fn summary_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("metric,mean,q05,q95,n\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.metric, r.mean, r.q05, r.q95, r.n);
    }
    s
}

/// Long-format sweep table.
pub fn sweep_csv(param: &str, rows: &[(f64, Vec<AggregateRow>)]) -> String {
    let mut s = format!("{param},metric,mean,q05,q95,n\n");
    for (v, agg) in rows {
        for r in agg {
            let _ = writeln!(s, "{v},{},{},{},{},{}", r.metric, r.mean, r.q05, r.q95, r.n);
        }
    }
    s
}

pub fn height_csv(runs: &[RunOutcome]) -> String {
    let mut s = String::from("t,height\n");
    if let Some(r) = runs.first() {
        for (t, h) in &r.heights {
            let _ = writeln!(s, "{t},{h}");
        }
    }
    s
}

/// Mean height over runs at each recorded step.
pub fn mean_heights(runs: &[RunOutcome]) -> Vec<(u64, f64)> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let n = runs.len() as f64;
    first
        .heights
        .iter()
        .enumerate()
        .map(|(i, &(t, _))| {
            let sum: f64 = runs.iter().map(|r| r.heights.get(i).map_or(f64::NAN, |h| h.1)).sum();
            (t, sum / n)
        })
        .collect()
}

/// Run metadata. Holds nothing that varies between identical invocations;
/// wall time goes to `timing.json`.
#[derive(Debug, Serialize)]
pub struct Meta<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
    pub task: Task,
    pub tree_height_convention: &'static str,
    pub preprocessing: String,
    pub runs: Vec<RunInfo>,
}

pub const HEIGHT_CONVENTION: &str = "a tree with only a root leaf has height 1";

impl<'a> Meta<'a> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig, runs: &[RunOutcome]) -> Self {
        let preprocessing = match &config.stream {
            crate::config::StreamConfig::Csv { preprocessing, .. } => preprocessing.clone(),
            _ => "generated".into(),
        };
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            task: config.task(),
            tree_height_convention: HEIGHT_CONVENTION,
            preprocessing,
            runs: runs.iter().map(|r| r.info.clone()).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub run_seconds: Vec<f64>,
}

pub fn write(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    let p = dir.join(name);
    fs::write(&p, content).map_err(|e| CliError::io(p.display().to_string(), e))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("serialising {name}: {e}")))?;
    s.push('\n');
    write(dir, name, &s)
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))
}

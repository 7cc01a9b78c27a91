//! The subcommands, as library calls that write into an output directory.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use dtstream::selfcheck::{self, CheckOutcome};

use crate::config::{ExperimentConfig, StreamConfig};
use crate::error::CliError;
use crate::experiment::{run_all, RunInfo, RunOutcome};
use crate::output::{self, AggregateRow, Meta, Timing};

pub struct RunSet {
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<AggregateRow>,
}

impl RunSet {
    pub fn degenerate_steps(&self) -> u64 {
        self.runs.iter().map(|r| r.info.degenerate_steps).sum()
    }
}

/// All repeats of one config, aggregated, without touching the disk.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunSet, CliError> {
    let runs = run_all(cfg)?;
    let summary = output::aggregate(cfg.task(), &runs);
    Ok(RunSet { runs, summary })
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSet, CliError> {
    let start = Instant::now();
    let set = execute(cfg)?;
    output::ensure_dir(out)?;
    for r in &set.runs {
        output::write(out, &format!("trace_{}.csv", r.info.index), &r.trace.to_csv())?;
        output::write(out, &format!("trace_{}.jsonl", r.info.index), &r.trace.to_jsonl())?;
        if cfg.record_height {
            output::write(
                out,
                &format!("height_{}.csv", r.info.index),
                &output::height_csv(std::slice::from_ref(r)),
            )?;
        }
    }
    output::write(out, "summary.csv", &output::summary_csv(&set.summary))?;
    output::write_json(out, "meta.json", &Meta::new("run", cfg, &set.runs))?;
    output::write_json(
        out,
        "timing.json",
        &Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
            run_seconds: set.runs.iter().map(|r| r.seconds).collect(),
        },
    )?;
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Lambda,
    K,
    W,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::K => "k",
            SweepParam::W => "w",
        }
    }

    /// `cfg` with the parameter set to `v`. For `w`, 0 means no window.
    pub fn apply(self, cfg: &ExperimentConfig, v: f64) -> Result<ExperimentConfig, CliError> {
        let mut c = cfg.clone();
        match self {
            SweepParam::Lambda => c.lambda = v,
            SweepParam::K => match &mut c.stream {
                StreamConfig::Friedman { k, .. } => *k = v,
                _ => return Err(CliError::Config("sweeping k needs a friedman stream".into())),
            },
            SweepParam::W => {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(CliError::Config(format!("window {v} is not a whole number")));
                }
                c.window = Some(v as usize);
                c.window_fraction = None;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Serialize)]
struct SweepMeta<'a> {
    parameter: SweepParam,
    values: &'a [f64],
    base: Meta<'a>,
    runs_per_value: Vec<Vec<RunInfo>>,
}

pub fn sweep_values(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<(f64, RunSet)>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| param.apply(cfg, v))
        .collect::<Result<Vec<_>, _>>()?;
    configs
        .iter()
        .zip(values)
        .map(|(c, &v)| Ok((v, execute(c)?)))
        .collect()
}

pub fn sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    out: &Path,
) -> Result<Vec<(f64, RunSet)>, CliError> {
    let start = Instant::now();
    let sets = sweep_values(cfg, param, values)?;
    output::ensure_dir(out)?;
    let rows: Vec<(f64, Vec<AggregateRow>)> =
        sets.iter().map(|(v, s)| (*v, s.summary.clone())).collect();
    output::write(out, "sweep.csv", &output::sweep_csv(param.name(), &rows))?;
    output::write_json(
        out,
        "meta.json",
        &SweepMeta {
            parameter: param,
            values,
            base: Meta::new("sweep", cfg, &[]),
            runs_per_value: sets
                .iter()
                .map(|(_, s)| s.runs.iter().map(|r| r.info.clone()).collect())
                .collect(),
        },
    )?;
    output::write_json(
        out,
        "timing.json",
        &Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
            run_seconds: sets
                .iter()
                .flat_map(|(_, s)| s.runs.iter().map(|r| r.seconds))
                .collect(),
        },
    )?;
    Ok(sets)
}

pub struct HeightVariant {
    pub name: String,
    pub window: Option<usize>,
    pub lambda: f64,
    /// Mean over repeats of the mean particle height, per step.
    pub heights: Vec<(u64, f64)>,
    pub runs: Vec<RunInfo>,
}

impl HeightVariant {
    /// Average height over steps with `from <= t < to`.
    pub fn mean_between(&self, from: u64, to: u64) -> f64 {
        let v: Vec<f64> = self
            .heights
            .iter()
            .filter(|(t, _)| *t >= from && *t < to)
            .map(|h| h.1)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Windowed variants with the given forgetting factors, plus the
/// full-data variant when `include_full` is set.
pub fn height_variants(
    cfg: &ExperimentConfig,
    lambdas: &[f64],
    include_full: bool,
) -> Result<Vec<HeightVariant>, CliError> {
    if !matches!(cfg.stream, StreamConfig::Friedman { .. }) || cfg.leaf == dtstream::leaf::LeafKind::Multinomial {
        return Err(CliError::Config("height-study needs a friedman regression stream".into()));
    }
    let w = cfg
        .window
        .filter(|&w| w > 0)
        .ok_or_else(|| CliError::Config("height-study needs a window".into()))?;
    let mut specs: Vec<(String, Option<usize>, f64)> = Vec::new();
    if include_full {
        specs.push(("full".into(), None, 1.0));
    }
    for &l in lambdas {
        specs.push((format!("lambda_{l}"), Some(w), l));
    }
    specs
        .into_iter()
        .map(|(name, window, lambda)| {
            let mut c = cfg.clone();
            c.window = window;
            c.window_fraction = None;
            c.lambda = lambda;
            c.record_height = true;
            c.validate()?;
            let runs = run_all(&c)?;
            Ok(HeightVariant {
                name,
                window,
                lambda,
                heights: output::mean_heights(&runs),
                runs: runs.into_iter().map(|r| r.info).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct HeightMeta<'a> {
    variants: Vec<(String, Option<usize>, f64)>,
    base: Meta<'a>,
    runs: Vec<Vec<RunInfo>>,
}

pub fn height_study(
    cfg: &ExperimentConfig,
    lambdas: &[f64],
    include_full: bool,
    out: &Path,
) -> Result<Vec<HeightVariant>, CliError> {
    let start = Instant::now();
    let vs = height_variants(cfg, lambdas, include_full)?;
    output::ensure_dir(out)?;

    let mut s = String::from("t");
    for v in &vs {
        let _ = write!(s, ",{}", v.name);
    }
    s.push('\n');
    let steps = vs.first().map_or(0, |v| v.heights.len());
    for i in 0..steps {
        let _ = write!(s, "{}", vs[0].heights[i].0);
        for v in &vs {
            let _ = write!(s, ",{}", v.heights.get(i).map_or(f64::NAN, |h| h.1));
        }
        s.push('\n');
    }
    output::write(out, "height.csv", &s)?;

    let (lo, hi) = match cfg.stream {
        StreamConfig::Friedman { start, end, .. } => (start, end),
        _ => unreachable!("checked by height_variants"),
    };
    let last = cfg.steps as u64;
    let phases = [
        ("before", 0, lo),
        ("during", lo, hi),
        ("after", hi, last),
        ("final_5000", last.saturating_sub(5000), last),
    ];
    let mut t = String::from("variant,phase,from,to,mean_height\n");
    for v in &vs {
        for (p, a, b) in phases {
            let _ = writeln!(t, "{},{p},{a},{b},{}", v.name, v.mean_between(a, b));
        }
    }
    output::write(out, "height_summary.csv", &t)?;
    output::write_json(
        out,
        "meta.json",
        &HeightMeta {
            variants: vs.iter().map(|v| (v.name.clone(), v.window, v.lambda)).collect(),
            base: Meta::new("height-study", cfg, &[]),
            runs: vs.iter().map(|v| v.runs.clone()).collect(),
        },
    )?;
    output::write_json(
        out,
        "timing.json",
        &Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
            run_seconds: Vec::new(),
        },
    )?;
    Ok(vs)
}

pub fn check(seed: u64, cases: usize) -> Vec<CheckOutcome> {
    selfcheck::run_all(seed, cases)
}

//! Single runs and repeat sets.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use dtstream::smc::ParticleCloud;
use dtstream::streams::{
    holdout_eval, load_csv, prequential_eval, Friedman, Generator, MetricSummary, MetricTrace,
    MovingXor, Parabola, Sample,
};
use dtstream::Observation;

use crate::config::{ExperimentConfig, Protocol, StreamConfig};
use crate::error::CliError;

/// SplitMix64 finaliser over `(base, index, salt)`, so every run and every
/// stream inside it draws from its own seed.
pub fn derive_seed(base: u64, index: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(salt.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SALT_CLOUD: u64 = 1;
const SALT_STREAM: u64 = 2;
const SALT_TEST: u64 = 3;
const SALT_FOLDS: u64 = 4;

/// Data and shapes shared by every run of a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: Option<Arc<Vec<Observation>>>,
    pub dim: usize,
    pub classes: usize,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    match cfg.csv_schema() {
        Some((path, schema)) => {
            let data = load_csv(&path, &schema)?;
            let first = data
                .first()
                .ok_or_else(|| CliError::Data(format!("{}: no rows", path.display())))?;
            let dim = first.x.len();
            let classes = if schema.label_map.is_empty() {
                data.iter()
                    .filter_map(|o| o.y.class())
                    .max()
                    .map_or(0, |c| c as usize + 1)
            } else {
                schema.label_map.len()
            };
            if let Some(k) = cfg.classes {
                if k < classes {
                    return Err(CliError::Data(format!(
                        "labels reach class {} but classes = {k}",
                        classes - 1
                    )));
                }
            }
            let classes = cfg.classes.unwrap_or(classes);
            if data.len() < cfg.init + 1 {
                return Err(CliError::Data(format!(
                    "{}: {} rows is too few",
                    path.display(),
                    data.len()
                )));
            }
            Ok(Prepared {
                data: Some(Arc::new(data)),
                dim,
                classes,
            })
        }
        None => {
            if cfg.steps <= cfg.init {
                return Err(CliError::Config(format!(
                    "steps {} must exceed init {}",
                    cfg.steps, cfg.init
                )));
            }
            Ok(Prepared {
                data: None,
                dim: cfg.stream_dim().unwrap_or(1),
                classes: cfg.classes.unwrap_or(2),
            })
        }
    }
}

pub fn make_generator(stream: &StreamConfig, seed: u64) -> Option<Box<dyn Generator + Send>> {
    match *stream {
        StreamConfig::Friedman { noise_sd, .. } => {
            let mut g = Friedman::new(seed, stream.drift());
            g.noise_sd = noise_sd;
            Some(Box::new(g))
        }
        StreamConfig::Parabola { noise_sd } => {
            let mut g = Parabola::new(seed);
            g.noise_sd = noise_sd;
            Some(Box::new(g))
        }
        StreamConfig::MovingXor {
            rotation_rate,
            blob_sd,
        } => {
            let mut g = MovingXor::new(seed, rotation_rate);
            g.blob_sd = blob_sd;
            Some(Box::new(g))
        }
        StreamConfig::Csv { .. } => None,
    }
}

/// Number of independent runs a config expands to.
pub fn run_count(cfg: &ExperimentConfig) -> usize {
    match cfg.protocol {
        Protocol::Cv => cfg.repeats * cfg.folds,
        _ => cfg.repeats,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub index: usize,
    pub seed: u64,
    pub window: Option<usize>,
    pub train_points: usize,
    pub scored: usize,
    pub degenerate_steps: u64,
    pub retired: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub info: RunInfo,
    pub trace: MetricTrace,
    pub summary: MetricSummary,
    /// `(t, mean particle height)` after each step, when recorded.
    pub heights: Vec<(u64, f64)>,
    pub seconds: f64,
}

fn wrap(obs: Vec<Observation>) -> Vec<Sample> {
    obs.into_iter().map(|obs| Sample { obs, mean: None }).collect()
}

fn leading(n: usize, fraction: Option<f64>) -> usize {
    fraction.map_or(n, |f| ((n as f64 * f).ceil() as usize).clamp(1, n))
}

struct Trainer {
    cloud: ParticleCloud,
    heights: Vec<(u64, f64)>,
    record: bool,
}

impl Trainer {
    fn new(cfg: &ExperimentConfig, prep: &Prepared, window: Option<usize>, seed: u64, first: &[Sample]) -> Result<Self, CliError> {
        let model = cfg.leaf_model(prep.dim, prep.classes);
        let cc = cfg.cloud_config(model, window, seed);
        let obs: Vec<Observation> = first.iter().map(|s| s.obs.clone()).collect();
        Ok(Self {
            cloud: ParticleCloud::init(&obs, cc)?,
            heights: Vec::new(),
            record: cfg.record_height,
        })
    }

    fn train(&mut self, samples: &[Sample]) -> Result<(), CliError> {
        for s in samples {
            self.cloud.update(&s.obs)?;
            if self.record {
                self.heights.push((s.obs.t, self.cloud.tree_summary().1));
            }
        }
        Ok(())
    }
}

pub fn run_one(cfg: &ExperimentConfig, prep: &Prepared, index: usize) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let i = index as u64;
    let seed = derive_seed(cfg.seed, i, SALT_CLOUD);
    let (trainer, trace, train_points, window) = match cfg.protocol {
        Protocol::Prequential => {
            let samples = match &prep.data {
                Some(d) => wrap(d.to_vec()),
                None => {
                    let mut g = make_generator(&cfg.stream, derive_seed(cfg.seed, i, SALT_STREAM))
                        .expect("generator stream");
                    let mut s = g.generate(0, cfg.init, 1);
                    s.extend(g.generate(cfg.init as u64, cfg.steps - cfg.init, cfg.batch));
                    s
                }
            };
            let n = leading(samples.len(), cfg.train_fraction);
            let window = cfg.window_for(n);
            let mut tr = Trainer::new(cfg, prep, window, seed, &samples[..cfg.init])?;
            let record = tr.record;
            let mut heights = Vec::new();
            let stream = &samples[cfg.init..n];
            let mut done = 0;
            let trace = prequential_eval(&mut tr.cloud, stream, cfg.batch, |c, reports| {
                done += reports.len();
                if record {
                    heights.push((stream[done - 1].obs.t, c.tree_summary().1));
                }
            })?;
            tr.heights = heights;
            (tr, trace, n, window)
        }
        Protocol::Holdout => {
            let mut g = make_generator(&cfg.stream, derive_seed(cfg.seed, i, SALT_STREAM))
                .expect("generator stream");
            let train = g.generate(0, leading(cfg.steps, cfg.train_fraction), 1);
            let window = cfg.window_for(cfg.steps);
            let mut tr = Trainer::new(cfg, prep, window, seed, &train[..cfg.init])?;
            tr.train(&train[cfg.init..])?;
            let mut tg = make_generator(&cfg.stream, derive_seed(cfg.seed, i, SALT_TEST))
                .expect("generator stream");
            let test = tg.generate(train.len() as u64, 1, cfg.test_size);
            let trace = holdout_eval(&tr.cloud, &test);
            let n = train.len();
            (tr, trace, n, window)
        }
        Protocol::Cv => {
            let data = prep.data.as_ref().expect("csv data");
            let (repeat, fold) = (i / cfg.folds as u64, index % cfg.folds);
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, repeat, SALT_FOLDS)));
            let n = data.len();
            let (lo, hi) = (fold * n / cfg.folds, (fold + 1) * n / cfg.folds);
            let test: Vec<Observation> = order[lo..hi].iter().map(|&j| data[j].clone()).collect();
            let train: Vec<Observation> = order[..lo]
                .iter()
                .chain(&order[hi..])
                .enumerate()
                .map(|(t, &j)| {
                    let mut o = data[j].clone();
                    o.t = t as u64;
                    o
                })
                .collect();
            let window = cfg.window_for(train.len());
            let train = wrap(train);
            let m = leading(train.len(), cfg.train_fraction);
            if m <= cfg.init {
                return Err(CliError::Config(format!(
                    "training fold of {m} points does not exceed init {}",
                    cfg.init
                )));
            }
            let mut tr = Trainer::new(cfg, prep, window, seed, &train[..cfg.init])?;
            tr.train(&train[cfg.init..m])?;
            let trace = holdout_eval(&tr.cloud, &wrap(test));
            (tr, trace, m, window)
        }
    };
    let summary = trace.summary();
    Ok(RunOutcome {
        info: RunInfo {
            index,
            seed,
            window,
            train_points,
            scored: trace.len(),
            degenerate_steps: trainer.cloud.degenerate_steps(),
            retired: trainer.cloud.retired_count(),
        },
        trace,
        summary,
        heights: trainer.heights,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Every run of a config, in index order, on `cfg.threads` workers.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>, CliError> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let n = run_count(cfg);
    if cfg.threads <= 1 {
        return (0..n).map(|i| run_one(cfg, &prep, i)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(|i| run_one(cfg, &prep, i)).collect())
}

/// Misclassification rate, for summaries of classification runs.
pub fn error_rate(s: &MetricSummary) -> f64 {
    1.0 - s.ccr
}

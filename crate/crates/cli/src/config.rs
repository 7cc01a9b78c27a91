//! Experiment configuration: a TOML file, then dotted `key=value`
//! overrides, then typed validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dtstream::discard::{DiscardPolicy, PolicyKind};
use dtstream::leaf::{LeafKind, LeafModel};
use dtstream::smc::{CloudConfig, Resampling};
use dtstream::streams::{CsvSchema, Drift, MovingXor, Task};
use dtstream::tree::TreePriorConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Test-then-train over the stream.
    #[default]
    Prequential,
    /// Train on the stream, then score a fresh test set.
    Holdout,
    /// Repeated k-fold cross validation over a CSV file.
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DriftKind {
    #[default]
    None,
    Sinusoidal,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamConfig {
    Friedman {
        #[serde(default)]
        drift: DriftKind,
        #[serde(default = "one")]
        k: f64,
        #[serde(default = "ten")]
        level: f64,
        #[serde(default = "step_start")]
        start: u64,
        #[serde(default = "step_end")]
        end: u64,
        #[serde(default = "one")]
        noise_sd: f64,
    },
    Parabola {
        #[serde(default = "one")]
        noise_sd: f64,
    },
    MovingXor {
        #[serde(default = "MovingXor::default_rate")]
        rotation_rate: f64,
        #[serde(default = "half")]
        blob_sd: f64,
    },
    Csv {
        path: PathBuf,
        label: String,
        #[serde(default)]
        features: Vec<String>,
        #[serde(default = "yes")]
        header: bool,
        #[serde(default)]
        label_map: Vec<String>,
        /// Preprocessing applied before ingestion, echoed into metadata.
        #[serde(default = "as_is")]
        preprocessing: String,
    },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn ten() -> f64 {
    10.0
}
fn yes() -> bool {
    true
}
fn as_is() -> String {
    "none (ingested as-is)".into()
}
fn step_start() -> u64 {
    10_000
}
fn step_end() -> u64 {
    20_000
}

impl StreamConfig {
    pub fn drift(&self) -> Drift {
        match *self {
            StreamConfig::Friedman {
                drift: DriftKind::Sinusoidal,
                k,
                ..
            } => Drift::Sinusoidal { k },
            StreamConfig::Friedman {
                drift: DriftKind::Step,
                level,
                start,
                end,
                ..
            } => Drift::Step { level, start, end },
            _ => Drift::None,
        }
    }

    pub fn is_csv(&self) -> bool {
        matches!(self, StreamConfig::Csv { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form label used in metadata.
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_leaf")]
    pub leaf: LeafKind,
    /// Class count for multinomial leaves; inferred from the stream when unset.
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Active pool size; unset or 0 keeps everything.
    #[serde(default)]
    pub window: Option<usize>,
    /// Window as a fraction of the training stream (CSV protocols).
    #[serde(default)]
    pub window_fraction: Option<f64>,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub min_leaf: Option<usize>,
    #[serde(default)]
    pub resampling: Resampling,
    #[serde(default = "default_resync")]
    pub resync_every: usize,
    #[serde(default = "one_usize")]
    pub repeats: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub threads: usize,
    #[serde(default)]
    pub protocol: Protocol,
    /// Samples scored, then learned, per prequential step.
    #[serde(default = "one_usize")]
    pub batch: usize,
    /// Stream steps after the initial batch (generators); CSV uses every row.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Points the cloud is initialised on.
    #[serde(default = "default_init")]
    pub init: usize,
    /// Fresh test points for the holdout protocol.
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Train on only this leading fraction of each training stream.
    #[serde(default)]
    pub train_fraction: Option<f64>,
    /// Record mean particle tree height after every step.
    #[serde(default)]
    pub record_height: bool,
    pub stream: StreamConfig,
}

fn default_leaf() -> LeafKind {
    LeafKind::Linear
}
fn default_particles() -> usize {
    100
}
fn default_policy() -> PolicyKind {
    PolicyKind::Historical
}
fn default_alpha() -> f64 {
    0.95
}
fn default_beta() -> f64 {
    2.0
}
fn default_resync() -> usize {
    250
}
fn one_usize() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn default_steps() -> usize {
    2000
}
fn default_init() -> usize {
    20
}
fn default_test_size() -> usize {
    1000
}
fn default_folds() -> usize {
    5
}

impl ExperimentConfig {
    /// Parse TOML text, apply overrides, then validate.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        // relative CSV paths are resolved against the config file
        if let StreamConfig::Csv { path: p, .. } = &mut cfg.stream {
            if p.is_relative() && !p.exists() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn task(&self) -> Task {
        if self.leaf == LeafKind::Multinomial {
            Task::Classification
        } else {
            Task::Regression
        }
    }

    pub fn stream_dim(&self) -> Option<usize> {
        match self.stream {
            StreamConfig::Friedman { .. } => Some(5),
            StreamConfig::Parabola { .. } => Some(1),
            StreamConfig::MovingXor { .. } => Some(2),
            StreamConfig::Csv { .. } => None,
        }
    }

    pub fn csv_schema(&self) -> Option<(PathBuf, CsvSchema)> {
        match &self.stream {
            StreamConfig::Csv {
                path,
                label,
                features,
                header,
                label_map,
                ..
            } => {
                let mut s = CsvSchema::new(label.clone(), self.task());
                s.features = features.clone();
                s.header = *header;
                s.label_map = label_map.clone();
                Some((path.clone(), s))
            }
            _ => None,
        }
    }

    pub fn leaf_model(&self, dim: usize, classes: usize) -> LeafModel {
        match self.leaf {
            LeafKind::Constant => LeafModel::constant(dim),
            LeafKind::Linear => LeafModel::linear(dim),
            LeafKind::Multinomial => LeafModel::multinomial(dim, self.classes.unwrap_or(classes)),
        }
    }

    /// The resolved window for a training stream of `train_len` points.
    pub fn window_for(&self, train_len: usize) -> Option<usize> {
        match (self.window, self.window_fraction) {
            (Some(w), _) if w > 0 => Some(w),
            (_, Some(f)) => Some(((train_len as f64 * f).round() as usize).max(1)),
            _ => None,
        }
    }

    pub fn cloud_config(&self, model: LeafModel, window: Option<usize>, seed: u64) -> CloudConfig {
        let mut prior = TreePriorConfig::for_model(&model);
        prior.alpha = self.alpha;
        prior.beta = self.beta;
        if let Some(m) = self.min_leaf {
            prior.min_leaf = m;
        }
        let mut c = CloudConfig::new(model, self.particles, seed);
        c.prior = prior;
        c.window = window;
        c.policy = DiscardPolicy::new(self.policy, self.lambda);
        c.resampling = self.resampling;
        c.resync_every = self.resync_every;
        c
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if let Some(f) = self.window_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("window_fraction {f} must lie in (0, 1]"));
            }
        }
        if let Some(f) = self.train_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("train_fraction {f} must lie in (0, 1]"));
            }
        }
        match (&self.stream, self.task()) {
            (StreamConfig::MovingXor { .. }, Task::Regression) => {
                return bad("moving_xor is a classification stream; use leaf = \"multinomial\"".into())
            }
            (StreamConfig::Friedman { .. } | StreamConfig::Parabola { .. }, Task::Classification) => {
                return bad("this generator is a regression stream".into())
            }
            _ => {}
        }
        if self.protocol == Protocol::Cv && !self.stream.is_csv() {
            return bad("protocol \"cv\" needs a csv stream".into());
        }
        if self.protocol == Protocol::Cv && self.folds < 2 {
            return bad("cv needs at least two folds".into());
        }
        if self.protocol == Protocol::Holdout && self.stream.is_csv() {
            return bad("holdout needs a generator stream; use cv for files".into());
        }
        if let StreamConfig::MovingXor { blob_sd, .. } = self.stream {
            if !(blob_sd > 0.0) {
                return bad(format!("blob_sd {blob_sd} must be positive"));
            }
        }
        // the core checks the rest once dimensions are known
        let dim = self.stream_dim().unwrap_or(1);
        let window = self.window.filter(|&w| w > 0);
        let cfg = self.cloud_config(self.leaf_model(dim, 2), window, self.seed);
        cfg.validate()?;
        if let Some(w) = window {
            if self.init > w {
                return bad(format!("init {} exceeds the window {w}", self.init));
            }
        }
        if self.init < cfg.prior.min_leaf {
            return bad(format!(
                "init {} is below min_leaf {}",
                self.init, cfg.prior.min_leaf
            ));
        }
        Ok(())
    }
}

/// Set `a.b.c = value` in a TOML table. The value is parsed as TOML when
/// possible and taken as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override key {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

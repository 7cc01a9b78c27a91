//! Data sources and evaluation: synthetic generators, CSV ingestion,
//! metrics, and prequential / holdout evaluation loops.

mod csv;
mod eval;
mod generators;
mod metrics;

pub use self::csv::{load_csv, CsvSchema, Task};
pub use eval::{holdout_eval, prequential_eval, score};
pub use generators::{
    drift_amplitude, friedman_mean, moving_xor_label, parabola_mean, Drift, Friedman, Generator,
    MovingXor, Parabola, Sample,
};
pub use metrics::{auc, MetricSummary, MetricTrace, StepRecord};

use crate::error::Result;
use crate::obs::Response;
use crate::smc::{ParticleCloud, StepReport};

use super::generators::Sample;
use super::metrics::{MetricTrace, StepRecord};

/// Score the cloud's prediction for one sample. Only `x` reaches the model
/// before the record is formed.
pub fn score(cloud: &ParticleCloud, sample: &Sample) -> StepRecord {
    let pred = cloud.predict(&sample.obs.x);
    let t = sample.obs.t;
    match sample.obs.y {
        Response::Real(y) => {
            let truth = sample.mean.unwrap_or(y);
            let err = pred.mean() - truth;
            StepRecord {
                t,
                density: pred.density(y),
                sq_err: Some(err * err),
                correct: None,
                score: None,
                label: None,
            }
        }
        Response::Class(c) => {
            let p = pred.class_probs();
            let best = p
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0;
            StepRecord {
                t,
                density: p.get(c as usize).copied().unwrap_or(0.0),
                sq_err: None,
                correct: Some(best == c as usize),
                score: (p.len() == 2).then(|| p[1]),
                label: Some(c),
            }
        }
    }
}

/// Test-then-train: for each chunk of `batch` samples, score every sample,
/// then update the cloud with them in order. `on_step` sees the cloud after
/// each chunk.
pub fn prequential_eval(
    cloud: &mut ParticleCloud,
    samples: &[Sample],
    batch: usize,
    mut on_step: impl FnMut(&ParticleCloud, &[StepReport]),
) -> Result<MetricTrace> {
    let batch = batch.max(1);
    let mut trace = MetricTrace::default();
    let mut reports = Vec::with_capacity(batch);
    for chunk in samples.chunks(batch) {
        for s in chunk {
            trace.push(score(cloud, s));
        }
        reports.clear();
        for s in chunk {
            reports.push(cloud.update(&s.obs)?);
        }
        on_step(cloud, &reports);
    }
    Ok(trace)
}

/// Score a fixed test set without updating.
pub fn holdout_eval(cloud: &ParticleCloud, test: &[Sample]) -> MetricTrace {
    let mut trace = MetricTrace::default();
    for s in test {
        trace.push(score(cloud, s));
    }
    trace
}

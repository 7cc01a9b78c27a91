mod common;

use std::io::Write;
use std::path::Path;

use common::{ks_critical_01, ks_uniform};
use dtstream::leaf::LeafModel;
use dtstream::smc::{CloudConfig, ParticleCloud};
use dtstream::streams::{
    auc, load_csv, prequential_eval, score, CsvSchema, Drift, Friedman, Generator, MovingXor,
    Parabola, Task,
};
use dtstream::{Error, Response};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Trapezoidal area under the empirical ROC curve, sweeping thresholds
/// from high to low.
fn roc_trapezoid(scores: &[f64], positive: &[bool]) -> f64 {
    let np = positive.iter().filter(|&&p| p).count() as f64;
    let nn = positive.len() as f64 - np;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if positive[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - fp0) / nn * (tp + tp0) / (2.0 * np);
    }
    area
}

proptest! {
    #[test]
    fn auc_matches_trapezoidal_roc(
        pairs in prop::collection::vec((0u8..20, any::<bool>()), 2..80),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s as f64 / 20.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|(_, l)| *l).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        prop_assert!((auc(&scores, &labels) - roc_trapezoid(&scores, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn generators_are_deterministic_per_seed(seed in any::<u64>()) {
        let a = Friedman::new(seed, Drift::None).generate(0, 20, 2);
        let b = Friedman::new(seed, Drift::None).generate(0, 20, 2);
        prop_assert_eq!(&a, &b);
        let c = Friedman::new(seed.wrapping_add(1), Drift::None).generate(0, 20, 2);
        prop_assert_ne!(&a, &c);
        prop_assert!(a.iter().enumerate().all(|(i, s)| s.obs.t == (i / 2) as u64));
    }
}

#[test]
fn parabola_inputs_are_uniform() {
    let mut g = Parabola::new(21);
    let mut u: Vec<f64> = g
        .generate(0, 20_000, 1)
        .iter()
        .map(|s| (s.obs.x[0] + 3.0) / 5.0)
        .collect();
    let n = u.len();
    assert!(ks_uniform(&mut u) < ks_critical_01(n));
}

#[test]
fn friedman_noise_is_standard_normal() {
    let mut g = Friedman::new(2, Drift::None);
    let s = g.generate(0, 20_000, 1);
    let norm = Normal::standard();
    let mut u: Vec<f64> = s
        .iter()
        .map(|s| norm.cdf(s.obs.y.as_f64() - s.mean.unwrap()))
        .collect();
    assert!(ks_uniform(&mut u) < ks_critical_01(u.len()));
}

#[test]
fn moving_xor_bayes_rate_is_stationary() {
    let mut g = MovingXor::new(3, MovingXor::default_rate());
    let p = Normal::new(0.0, g.blob_sd).unwrap().cdf(1.0);
    // correct iff the noise leaves both coordinates on their blob's side, or flips both
    let bayes = p * p + (1.0 - p) * (1.0 - p);
    let samples = g.generate(0, 20_000, 1);
    for chunk in samples.chunks(5_000) {
        let ccr = chunk
            .iter()
            .filter(|s| {
                let Response::Class(c) = s.obs.y else { unreachable!() };
                g.bayes_label(&s.obs.x, s.obs.t) == c
            })
            .count() as f64
            / chunk.len() as f64;
        // 5 binomial SDs is about 0.015 at 5000 draws
        assert!((ccr - bayes).abs() < 0.015, "ccr {ccr} vs {bayes}");
    }
}

#[test]
fn spambase_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/spambase.csv");
    let data = load_csv(&path, &CsvSchema::new("spam", Task::Classification)).unwrap();
    assert_eq!(data.len(), 4597);
    assert!(data.iter().all(|o| o.x.len() == 57));
    let spam = data
        .iter()
        .filter(|o| o.y == Response::Class(1))
        .count();
    assert_eq!(spam, 1812);
    assert!(data.iter().all(|o| matches!(o.y, Response::Class(0 | 1))));
}

#[test]
fn malformed_csv_reports_the_line() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "a,b,y\n1,2,3\n4,oops,5").unwrap();
    let err = load_csv(f.path(), &CsvSchema::new("y", Task::Regression)).unwrap_err();
    match err {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn prequential_scores_before_training() {
    let mut g = Friedman::new(4, Drift::None);
    let samples = g.generate(0, 120, 1);
    let init: Vec<_> = samples[..20].iter().map(|s| s.obs.clone()).collect();
    let cfg = CloudConfig::new(LeafModel::linear(5), 8, 1);
    let mut a = ParticleCloud::init(&init, cfg.clone()).unwrap();
    let mut b = ParticleCloud::init(&init, cfg).unwrap();
    let mut steps = 0;
    let trace = prequential_eval(&mut a, &samples[20..], 3, |_, r| {
        assert!(r.len() <= 3);
        steps += 1;
    })
    .unwrap();
    assert_eq!(steps, 34);
    assert_eq!(trace.len(), 100);
    for (chunk, recs) in samples[20..].chunks(3).zip(trace.records.chunks(3)) {
        for (s, r) in chunk.iter().zip(recs) {
            assert_eq!(score(&b, s), *r);
        }
        for s in chunk {
            b.update(&s.obs).unwrap();
        }
    }
    // regression error is measured against the noiseless mean
    let s = &samples[20];
    let fresh = ParticleCloud::init(&init, CloudConfig::new(LeafModel::linear(5), 8, 1)).unwrap();
    let err = fresh.predict(&s.obs.x).mean() - s.mean.unwrap();
    assert_eq!(trace.records[0].sq_err, Some(err * err));
}

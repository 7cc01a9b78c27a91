//! Runtime self-checks: quick randomized versions of the core identities,
//! runnable from a release binary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint;
use crate::discard::{alc_reduction, DiscardPolicy, PolicyKind};
use crate::leaf::{
    pool_priors, posterior, retire_into_prior, split_prior, LeafModel, LeafPrior, Vague,
};
use crate::obs::Observation;
use crate::smc::{CloudConfig, ParticleCloud};
use crate::streams::{Drift, Friedman, Generator};
use crate::tree::Rect;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, worst: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn random_obs(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Observation> {
    let beta: Vec<f64> = (0..=d).map(|_| rng.sample(StandardNormal)).collect();
    (0..n)
        .map(|t| {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let e: f64 = rng.sample(StandardNormal);
            let y = beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>() + 0.3 * e;
            Observation::regression(x, y, t as u64)
        })
        .collect()
}

/// Retiring at `lambda = 1` leaves the leaf predictive unchanged.
pub fn retirement_invariance(rng: &mut ChaCha8Rng, cases: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    let v = Vague::default();
    for _ in 0..cases {
        let d = rng.random_range(1..4);
        let model = LeafModel::linear(d);
        let n = rng.random_range(2 * d + 4..30);
        let data = random_obs(rng, d, n);
        let k = rng.random_range(0..n / 2);
        let mut prior = model.empty_prior();
        for o in &data[..k] {
            prior = retire_into_prior(&prior, &model, o, 1.0).unwrap();
        }
        let active = &data[k..];
        let before = posterior(&model, &prior, active).unwrap();
        let r = rng.random_range(0..active.len());
        let after_prior = retire_into_prior(&prior, &model, &active[r], 1.0).unwrap();
        let rest: Vec<Observation> = active
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != r)
            .map(|(_, o)| o.clone())
            .collect();
        let after = posterior(&model, &after_prior, &rest).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let y: f64 = rng.sample(StandardNormal);
            worst = worst.max(rel(
                before.predictive(&x, &v).density(y),
                after.predictive(&x, &v).density(y),
            ));
        }
    }
    outcome("retirement invariance", worst, 1e-9)
}

/// Splitting a prior and pooling the halves restores it.
pub fn split_pool_reversibility(rng: &mut ChaCha8Rng, cases: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(1..4);
        let model = LeafModel::linear(d);
        let data = random_obs(rng, d, 12);
        let mut prior = model.empty_prior();
        for o in &data {
            prior = retire_into_prior(&prior, &model, o, 0.9).unwrap();
        }
        let a: f64 = rng.random();
        let (l, r) = split_prior(&prior, a).unwrap();
        let back = pool_priors(&l, &r).unwrap();
        if let (LeafPrior::Regression(p), LeafPrior::Regression(b)) = (&prior, &back) {
            let pairs = p
                .gram
                .iter()
                .zip(&b.gram)
                .chain(p.xy.iter().zip(&b.xy))
                .chain([(&p.r, &b.r), (&p.n_eff, &b.n_eff)]);
            for (u, v) in pairs {
                worst = worst.max((u - v).abs() / u.abs().max(1.0));
            }
        }
    }
    outcome("split/pool reversibility", worst, 1e-12)
}

/// Closed-form ALC against three-point Gauss-Legendre tensor quadrature,
/// which is exact for the quadratic integrand.
pub fn alc_quadrature(rng: &mut ChaCha8Rng, cases: usize) -> CheckOutcome {
    let nodes = [-(0.6f64.sqrt()), 0.0, 0.6f64.sqrt()];
    let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let m = rng.random_range(1..4);
        let model = LeafModel::linear(m);
        let n = rng.random_range(2 * m + 6..40);
        let data = random_obs(rng, m, n);
        let post = posterior(&model, &model.empty_prior(), &data).unwrap();
        let crate::leaf::LeafPosterior::Regression(p) = &post else {
            unreachable!()
        };
        if !p.is_proper() || p.slopes() != m {
            continue;
        }
        let lo: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 0.5).collect();
        let hi: Vec<f64> = lo.iter().map(|a| a + 0.1 + rng.random::<f64>()).collect();
        let rect = Rect {
            lo: lo.clone(),
            hi: hi.clone(),
        };
        let x: Vec<f64> = (0..m).map(|i| lo[i] + rng.random::<f64>() * (hi[i] - lo[i])).collect();
        let closed = alc_reduction(&post, &rect, &x);
        let row = p.row(&x);
        let g = p.solve_gram(&row).unwrap();
        let q: f64 = row.iter().zip(&g).map(|(a, b)| a * b).sum();
        let factor = p.rss / (p.n - m as f64 - 3.0) / (1.0 + q);
        let mut integral = 0.0;
        let total = 3usize.pow(m as u32);
        for k in 0..total {
            let mut idx = k;
            let mut w = 1.0;
            let mut val = g[0];
            for i in 0..m {
                let j = idx % 3;
                idx /= 3;
                let half = 0.5 * (hi[i] - lo[i]);
                let z = 0.5 * (hi[i] + lo[i]) + half * nodes[j];
                w *= weights[j] * half;
                val += g[i + 1] * z;
            }
            integral += w * val * val;
        }
        worst = worst.max(rel(closed, factor * integral));
    }
    outcome("ALC closed form vs quadrature", worst, 1e-6)
}

/// Retired plus active statistics at `lambda = 1` match a batch fit.
pub fn batch_equivalence(rng: &mut ChaCha8Rng, cases: usize) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    let v = Vague::default();
    for _ in 0..cases {
        let d = rng.random_range(1..4);
        let model = LeafModel::linear(d);
        let n = rng.random_range(2 * d + 4..40);
        let data = random_obs(rng, d, n);
        let k = rng.random_range(0..n);
        let mut prior = model.empty_prior();
        for o in &data[..k] {
            prior = retire_into_prior(&prior, &model, o, 1.0).unwrap();
        }
        let online = posterior(&model, &prior, &data[k..]).unwrap();
        let batch = posterior(&model, &model.empty_prior(), &data).unwrap();
        worst = worst.max(rel(online.log_marginal(&v), batch.log_marginal(&v)));
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        worst = worst.max(rel(
            online.predictive(&x, &v).density(0.3),
            batch.predictive(&x, &v).density(0.3),
        ));
    }
    outcome("batch equivalence", worst, 1e-9)
}

fn small_cloud(seed: u64, policy: PolicyKind, lambda: f64) -> (ParticleCloud, Vec<Observation>) {
    let data: Vec<Observation> = Friedman::new(seed, Drift::None)
        .generate(0, 400, 1)
        .into_iter()
        .map(|s| s.obs)
        .collect();
    let mut cfg = CloudConfig::new(LeafModel::linear(5), 20, seed);
    cfg.window = Some(60);
    cfg.policy = DiscardPolicy::new(policy, lambda);
    cfg.resync_every = 0;
    let cloud = ParticleCloud::init(&data[..20], cfg).expect("valid config");
    (cloud, data)
}

/// Incremental AD cache against a rebuild, and partition invariants.
pub fn cache_coherence(seed: u64) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for lambda in [1.0, 0.9] {
        let (mut cloud, data) = small_cloud(seed, PolicyKind::Alc, lambda);
        for o in &data[20..] {
            cloud.update(o).expect("update");
            worst = worst.max(cloud.cache_error());
            for t in cloud.particles() {
                if let Err(e) = t.validate(&cloud.ctx()) {
                    return CheckOutcome {
                        name: "AD cache coherence",
                        passed: false,
                        detail: e,
                    };
                }
            }
        }
    }
    outcome("AD cache coherence", worst, 1e-9)
}

/// Saving and restoring mid-stream changes nothing downstream.
pub fn checkpoint_roundtrip(seed: u64) -> CheckOutcome {
    let (mut a, data) = small_cloud(seed, PolicyKind::Alc, 0.95);
    for o in &data[20..200] {
        a.update(o).expect("update");
    }
    let mut buf = Vec::new();
    checkpoint::save(&a, &mut buf).expect("save");
    let mut b = checkpoint::load(buf.as_slice()).expect("load");
    let mut worst: f64 = 0.0;
    for o in &data[200..] {
        let ra = a.update(o).expect("update");
        let rb = b.update(o).expect("update");
        worst = worst.max((ra.log_pred - rb.log_pred).abs());
        if ra.retired != rb.retired {
            worst = f64::INFINITY;
        }
    }
    outcome("checkpoint round trip", worst, 0.0)
}

pub fn run_all(seed: u64, cases: usize) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        retirement_invariance(&mut rng, cases),
        split_pool_reversibility(&mut rng, cases),
        alc_quadrature(&mut rng, cases),
        batch_equivalence(&mut rng, cases),
        cache_coherence(seed),
        checkpoint_roundtrip(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_all(11, 50) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}

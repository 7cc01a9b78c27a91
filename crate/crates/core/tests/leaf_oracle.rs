//! Leaf posteriors against a weighted least-squares oracle built on
//! nalgebra's SVD, plus the leaf-level invariants.

mod common;

use common::{linear_obs, rel};
use dtstream::leaf::{
    pool_priors, posterior, retire_into_prior, split_prior, LeafModel, LeafPosterior, LeafPrior,
    Predictive, Vague,
};
use dtstream::Observation;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, StudentsT};

struct Oracle {
    coef: DVector<f64>,
    rss: f64,
    n: f64,
    ginv: DMatrix<f64>,
}

/// Weighted least squares on augmented rows `[1, x]`.
fn oracle(data: &[(Observation, f64)], p: usize) -> Oracle {
    let n = data.len();
    let mut a = DMatrix::zeros(n, p);
    let mut b = DVector::zeros(n);
    let mut g = DMatrix::zeros(p, p);
    for (i, (o, w)) in data.iter().enumerate() {
        let row: Vec<f64> = std::iter::once(1.0).chain(o.x.iter().copied()).take(p).collect();
        let sw = w.sqrt();
        for j in 0..p {
            a[(i, j)] = sw * row[j];
            for k in 0..p {
                g[(j, k)] += w * row[j] * row[k];
            }
        }
        b[i] = sw * o.y.as_f64();
    }
    let coef = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
    let resid = &b - &a * &coef;
    Oracle {
        coef,
        rss: resid.dot(&resid),
        n: data.iter().map(|(_, w)| w).sum(),
        ginv: g.try_inverse().unwrap(),
    }
}

fn reg_post(p: &LeafPosterior) -> &dtstream::leaf::RegressionPosterior {
    match p {
        LeafPosterior::Regression(r) => r,
        _ => panic!("regression posterior expected"),
    }
}

/// Retire `retired` in order with forgetting `lambda`, returning the prior
/// and each point's resulting weight.
fn retire_all(
    model: &LeafModel,
    retired: &[Observation],
    lambda: f64,
) -> (LeafPrior, Vec<(Observation, f64)>) {
    let mut prior = model.empty_prior();
    for o in retired {
        prior = retire_into_prior(&prior, model, o, lambda).unwrap();
    }
    let k = retired.len();
    let weighted = retired
        .iter()
        .enumerate()
        .map(|(j, o)| (o.clone(), lambda.powi((k - 1 - j) as i32)))
        .collect();
    (prior, weighted)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn linear_posterior_matches_weighted_least_squares(
        seed in any::<u64>(),
        d in 1usize..4,
        n_ret in 0usize..20,
        extra in 0usize..20,
        lambda in 0.5f64..=1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LeafModel::linear(d);
        let n_act = 2 * d + 4 + extra;
        let data = linear_obs(&mut rng, d, n_ret + n_act, 0.5);
        let (prior, mut weighted) = retire_all(&model, &data[..n_ret], lambda);
        let active = &data[n_ret..];
        weighted.extend(active.iter().map(|o| (o.clone(), 1.0)));
        let post = posterior(&model, &prior, active).unwrap();
        let r = reg_post(&post);
        let o = oracle(&weighted, d + 1);

        prop_assert!(r.is_proper());
        for j in 0..=d {
            prop_assert!((r.coef[j] - o.coef[j]).abs() <= 1e-8 * o.coef[j].abs().max(1.0));
        }
        prop_assert!(rel(r.rss, o.rss) <= 1e-8);
        prop_assert!(rel(r.n, o.n) <= 1e-12);
        prop_assert!(rel(r.nu, o.n - (d + 1) as f64) <= 1e-12);

        // Student-t predictive with scale^2 = s^2 (1 + x~' G^-1 x~)
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let xt = DVector::from_iterator(d + 1, std::iter::once(1.0).chain(x.iter().copied()));
        let loc = xt.dot(&o.coef);
        let nu = o.n - (d + 1) as f64;
        let s2 = o.rss / nu;
        let scale = (s2 * (1.0 + (xt.transpose() * &o.ginv * &xt)[(0, 0)])).sqrt();
        let t = StudentsT::new(loc, scale, nu).unwrap();
        let y = loc + scale * 0.7;
        let pred = post.predictive(&x, &Vague::default());
        prop_assert!(rel(pred.log_density(y), t.ln_pdf(y)) <= 1e-8);
        prop_assert!(pred.variance() > 0.0);
    }

    #[test]
    fn batch_equivalence_at_lambda_one(
        seed in any::<u64>(),
        d in 1usize..4,
        n in 10usize..40,
        cut in 0.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LeafModel::linear(d);
        let n = n.max(2 * d + 4);
        let data = linear_obs(&mut rng, d, n, 0.3);
        let k = (cut * n as f64) as usize;
        let (prior, _) = retire_all(&model, &data[..k], 1.0);
        let online = posterior(&model, &prior, &data[k..]).unwrap();
        let batch = posterior(&model, &model.empty_prior(), &data).unwrap();
        let (a, b) = (reg_post(&online), reg_post(&batch));
        for (u, v) in a.coef.iter().zip(&b.coef) {
            prop_assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
        prop_assert!(rel(a.rss, b.rss) <= 1e-9);
        let v = Vague::default();
        prop_assert!(rel(online.log_marginal(&v), batch.log_marginal(&v)) <= 1e-9);
    }

    #[test]
    fn forgetting_bounds_effective_count(
        n0 in 0usize..30,
        lambda in 0.0f64..1.0,
        steps in 1usize..200,
    ) {
        let model = LeafModel::constant(1);
        let mut prior = model.empty_prior();
        for t in 0..n0 {
            let o = Observation::regression(vec![0.0], t as f64, t as u64);
            prior = retire_into_prior(&prior, &model, &o, 1.0).unwrap();
        }
        let start = prior.strength();
        let bound = start.max(1.0 / (1.0 - lambda));
        for t in 0..steps {
            let o = Observation::regression(vec![0.0], 1.0, t as u64);
            prior = retire_into_prior(&prior, &model, &o, lambda).unwrap();
            prop_assert!(prior.strength() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn multinomial_probabilities_sum_to_one(
        seed in any::<u64>(),
        k in 2usize..6,
        n_ret in 0usize..30,
        n_act in 0usize..30,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LeafModel::multinomial(1, k);
        let obs: Vec<Observation> = (0..n_ret + n_act)
            .map(|t| Observation::classification(vec![0.0], rng.random_range(0..k as u32), t as u64))
            .collect();
        let (prior, _) = retire_all(&model, &obs[..n_ret], 1.0);
        // with baseline (1, ..., 1), sum(a) - K counts the retired points
        let LeafPrior::Multinomial(m) = &prior else { unreachable!() };
        let a = m.alpha(&model);
        prop_assert!((a.iter().sum::<f64>() - k as f64 - n_ret as f64).abs() < 1e-12);
        let post = posterior(&model, &prior, &obs[n_ret..]).unwrap();
        let Predictive::Categorical(p) = post.predictive(&[0.0], &Vague::default()) else {
            unreachable!()
        };
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn split_then_pool_is_identity(
        seed in any::<u64>(),
        d in 1usize..4,
        alpha in 0.0f64..=1.0,
        lambda in 0.5f64..=1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LeafModel::linear(d);
        let data = linear_obs(&mut rng, d, 15, 1.0);
        let (prior, _) = retire_all(&model, &data, lambda);
        let (l, r) = split_prior(&prior, alpha).unwrap();
        let back = pool_priors(&l, &r).unwrap();
        let (LeafPrior::Regression(p), LeafPrior::Regression(b)) = (&prior, &back) else {
            unreachable!()
        };
        let pairs = p.gram.iter().zip(&b.gram).chain(p.xy.iter().zip(&b.xy));
        for (u, v) in pairs.chain([(&p.r, &b.r), (&p.n_eff, &b.n_eff)]) {
            prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }
}

#[test]
fn constant_leaf_from_retired_points() {
    let model = LeafModel::constant(1);
    let data = [
        Observation::regression(vec![0.0], 1.0, 0),
        Observation::regression(vec![0.0], 3.0, 1),
    ];
    let (prior, weighted) = retire_all(&model, &data, 1.0);
    let post = posterior(&model, &prior, &[]).unwrap();
    let r = reg_post(&post);
    let o = oracle(&weighted, 1);
    assert!((r.coef[0] - o.coef[0]).abs() < 1e-12);
    assert!((o.coef[0] - 2.0).abs() < 1e-12);
    assert!((r.rss - o.rss).abs() < 1e-12);
    assert!((o.rss - 2.0).abs() < 1e-12);
}

#[test]
fn exact_line_from_retired_points() {
    let model = LeafModel::linear(1);
    let data: Vec<Observation> = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
        .iter()
        .enumerate()
        .map(|(t, &x)| Observation::regression(vec![x], 2.0 * x + 1.0, t as u64))
        .collect();
    let (prior, weighted) = retire_all(&model, &data, 1.0);
    let post = posterior(&model, &prior, &[]).unwrap();
    let r = reg_post(&post);
    let o = oracle(&weighted, 2);
    assert!((o.coef[0] - 1.0).abs() < 1e-10 && (o.coef[1] - 2.0).abs() < 1e-10);
    assert!((r.coef[0] - 1.0).abs() < 1e-9 && (r.coef[1] - 2.0).abs() < 1e-9);
    assert!(r.s2 < 1e-9);
    let m = post.predictive(&[5.0], &Vague::default()).mean();
    assert!((m - 11.0).abs() < 1e-8, "predictive mean {m}");
}

#[test]
fn marginal_chain_rule_against_student_t_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = LeafModel::linear(2);
    let data = linear_obs(&mut rng, 2, 30, 0.4);
    let v = Vague::default();
    for k in 10..30 {
        let before = posterior(&model, &model.empty_prior(), &data[..k]).unwrap();
        let after = posterior(&model, &model.empty_prior(), &data[..=k]).unwrap();
        let weighted: Vec<(Observation, f64)> = data[..k].iter().map(|o| (o.clone(), 1.0)).collect();
        let o = oracle(&weighted, 3);
        let x = &data[k].x;
        let xt = DVector::from_vec(vec![1.0, x[0], x[1]]);
        let nu = o.n - 3.0;
        let scale = (o.rss / nu * (1.0 + (xt.transpose() * &o.ginv * &xt)[(0, 0)])).sqrt();
        let t = StudentsT::new(xt.dot(&o.coef), scale, nu).unwrap();
        let step = after.log_marginal(&v) - before.log_marginal(&v);
        assert!(rel(step, t.ln_pdf(data[k].y.as_f64())) < 1e-8, "k={k}");
    }
}

//! ALC closed forms against quadrature and Monte Carlo oracles that share
//! no code with the library's integral.

mod common;

use common::{linear_obs, rel};
use dtstream::discard::{alc_leaf, alc_reduction, entropy, rect_integral};
use dtstream::leaf::{posterior, LeafModel, LeafPosterior};
use dtstream::tree::Rect;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Five-point Gauss-Legendre nodes and weights on [-1, 1].
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Tensor Gauss-Legendre over `lo..hi` with each axis cut into `panels`.
fn quadrature(lo: &[f64], hi: &[f64], panels: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let m = lo.len();
    let per_axis: Vec<Vec<(f64, f64)>> = (0..m)
        .map(|i| {
            let h = (hi[i] - lo[i]) / panels as f64;
            (0..panels)
                .flat_map(|k| {
                    let a = lo[i] + k as f64 * h;
                    GL5.iter().map(move |&(z, w)| (a + 0.5 * h * (z + 1.0), 0.5 * h * w))
                })
                .collect()
        })
        .collect();
    let sizes: Vec<usize> = per_axis.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    let mut z = vec![0.0; m];
    let mut sum = 0.0;
    for mut idx in 0..total {
        let mut w = 1.0;
        for i in 0..m {
            let (zi, wi) = per_axis[i][idx % sizes[i]];
            idx /= sizes[i];
            z[i] = zi;
            w *= wi;
        }
        sum += w * f(&z);
    }
    sum
}

/// Independent ALC: Gram matrix and residuals rebuilt from raw data with
/// nalgebra, integral by quadrature.
fn alc_oracle(
    data: &[dtstream::Observation],
    lo: &[f64],
    hi: &[f64],
    x: &[f64],
) -> f64 {
    let m = x.len();
    let p = m + 1;
    let n = data.len();
    let mut a = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (i, o) in data.iter().enumerate() {
        a[(i, 0)] = 1.0;
        for j in 0..m {
            a[(i, j + 1)] = o.x[j];
        }
        y[i] = o.y.as_f64();
    }
    let g = a.transpose() * &a;
    let ginv = g.try_inverse().unwrap();
    let beta = &ginv * a.transpose() * &y;
    let resid = &y - &a * &beta;
    let rss = resid.dot(&resid);
    let xt = DVector::from_iterator(p, std::iter::once(1.0).chain(x.iter().copied()));
    let gx = &ginv * &xt;
    let q = xt.dot(&gx);
    let integral = quadrature(lo, hi, 2, |z| {
        let v = gx[0] + (0..m).map(|i| gx[i + 1] * z[i]).sum::<f64>();
        v * v
    });
    rss / (n as f64 - m as f64 - 3.0) * integral / (1.0 + q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn closed_form_matches_quadrature(seed in any::<u64>(), m in 1usize..=3, extra in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LeafModel::linear(m);
        let data = linear_obs(&mut rng, m, 2 * m + 6 + extra, 0.5);
        let post = posterior(&model, &model.empty_prior(), &data).unwrap();
        let lo: Vec<f64> = (0..m).map(|_| rng.random::<f64>() - 0.5).collect();
        let hi: Vec<f64> = lo.iter().map(|a| a + 0.05 + rng.random::<f64>()).collect();
        let rect = Rect { lo: lo.clone(), hi: hi.clone() };
        let x: Vec<f64> = (0..m).map(|i| lo[i] + rng.random::<f64>() * (hi[i] - lo[i])).collect();
        let closed = alc_reduction(&post, &rect, &x);
        let oracle = alc_oracle(&data, &lo, &hi, &x);
        prop_assert!(rel(closed, oracle) <= 1e-6, "closed {closed} oracle {oracle}");
        prop_assert!(closed >= 0.0);
    }

    #[test]
    fn batch_alc_matches_pointwise(seed in any::<u64>(), m in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LeafModel::linear(m);
        let data = linear_obs(&mut rng, m, 3 * m + 10, 0.5);
        let post = posterior(&model, &model.empty_prior(), &data).unwrap();
        let rect = Rect { lo: vec![0.0; m], hi: vec![1.0; m] };
        let xs: Vec<&[f64]> = data.iter().map(|o| o.x.as_slice()).collect();
        let batch = alc_leaf(&post, &rect, xs.iter().copied());
        for (b, x) in batch.iter().zip(&xs) {
            prop_assert!(rel(*b, alc_reduction(&post, &rect, x)) <= 1e-12);
        }
    }

    #[test]
    fn entropy_is_bounded(raw in prop::collection::vec(0.0f64..1.0, 2..8)) {
        let s: f64 = raw.iter().sum();
        prop_assume!(s > 0.0);
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let h = entropy(&p);
        prop_assert!(h >= -1e-15);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
    }
}

#[test]
fn rect_integral_examples() {
    let unit2 = Rect {
        lo: vec![0.0, 0.0],
        hi: vec![1.0, 1.0],
    };
    assert!((rect_integral(&unit2, &[0.0, 0.0], 1.0) - 1.0).abs() < 1e-15);
    let unit1 = Rect {
        lo: vec![0.0],
        hi: vec![1.0],
    };
    assert!((rect_integral(&unit1, &[1.0], 0.0) - 1.0 / 3.0).abs() < 1e-15);
    let flat = Rect {
        lo: vec![0.0, 0.5],
        hi: vec![1.0, 0.5],
    };
    assert_eq!(rect_integral(&flat, &[1.0, 1.0], 1.0), 0.0);
}

#[test]
fn rect_integral_against_monte_carlo() {
    let rect = Rect {
        lo: vec![0.0, 0.0],
        hi: vec![1.0, 1.0],
    };
    let (c, g) = (0.5, [1.0, 2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let z: [f64; 2] = [rng.random(), rng.random()];
        let v = (c + g[0] * z[0] + g[1] * z[1]).powi(2);
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let sd = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    let exact = rect_integral(&rect, &g, c);
    assert!((exact - mean).abs() < 3.0 * sd, "exact {exact} mc {mean} sd {sd}");
}

#[test]
fn zero_integrand_gives_zero_reduction() {
    let rect = Rect {
        lo: vec![-1.0],
        hi: vec![1.0],
    };
    assert_eq!(rect_integral(&rect, &[0.0], 0.0), 0.0);
}

#[test]
fn unsaturated_leaf_is_never_discarded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = LeafModel::linear(3);
    // proper, but n <= m + 3 leaves the statistic undefined
    let data = linear_obs(&mut rng, 3, 6, 0.5);
    let post = posterior(&model, &model.empty_prior(), &data).unwrap();
    let rect = Rect {
        lo: vec![0.0; 3],
        hi: vec![1.0; 3],
    };
    let LeafPosterior::Regression(r) = &post else {
        unreachable!()
    };
    assert!(r.is_proper());
    assert_eq!(alc_reduction(&post, &rect, &data[0].x), f64::INFINITY);
}

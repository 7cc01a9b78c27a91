#![allow(dead_code)]

use dtstream::discard::AdKind;
use dtstream::leaf::LeafModel;
use dtstream::pool::{PointId, Pool};
use dtstream::tree::{Ctx, Rect, RetireMemo, Tree, TreePriorConfig};
use dtstream::Observation;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A pool plus the shared tree configuration, standing in for a cloud.
pub struct World {
    pub model: LeafModel,
    pub prior: TreePriorConfig,
    pub pool: Pool,
    pub bbox: Rect,
    pub ad: AdKind,
}

impl World {
    pub fn new(model: LeafModel, prior: TreePriorConfig, ad: AdKind) -> Self {
        let dim = model.dim;
        Self {
            model,
            prior,
            pool: Pool::new(dim),
            bbox: Rect::unbounded(dim),
            ad,
        }
    }

    pub fn ctx(&self) -> Ctx<'_> {
        Ctx {
            model: &self.model,
            prior: &self.prior,
            pool: &self.pool,
            bbox: &self.bbox,
            vague: self.pool.vague(),
            ad: self.ad,
        }
    }

    pub fn add(&mut self, obs: &Observation) -> PointId {
        if self.pool.is_empty() {
            self.bbox = Rect::around(&obs.x);
        } else {
            self.bbox.expand(&obs.x);
        }
        self.pool.insert(obs).unwrap()
    }

    /// Retire `id` from `tree` and drop it from the pool.
    pub fn retire(&mut self, tree: &Tree, id: PointId, lambda: f64) -> Tree {
        let mut memo = RetireMemo::default();
        let (t, _) = tree.retire(&self.ctx(), id, lambda, &mut memo).unwrap();
        self.pool.remove(id).unwrap();
        t
    }
}

pub fn linear_obs(rng: &mut ChaCha8Rng, d: usize, n: usize, noise: f64) -> Vec<Observation> {
    let beta: Vec<f64> = (0..=d).map(|_| rng.sample(StandardNormal)).collect();
    (0..n)
        .map(|t| {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let e: f64 = rng.sample(StandardNormal);
            let y = beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>() + noise * e;
            Observation::regression(x, y, t as u64)
        })
        .collect()
}

/// Piecewise surface with a jump, so trees have a reason to split.
pub fn step_obs(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Observation> {
    (0..n)
        .map(|t| {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let e: f64 = rng.sample(StandardNormal);
            let y = if x[0] > 0.5 { 5.0 + x[0] } else { -x[0] } + 0.3 * e;
            Observation::regression(x, y, t as u64)
        })
        .collect()
}

/// Grow a tree by streaming `data` through propagate, retiring the oldest
/// point with forgetting `lambda` whenever the pool exceeds `window`.
pub fn streamed_tree(
    world: &mut World,
    data: &[Observation],
    window: usize,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let init = world.prior.min_leaf.max(1);
    let ids: Vec<PointId> = data[..init].iter().map(|o| world.add(o)).collect();
    let mut tree = Tree::new(&world.ctx(), ids);
    for o in &data[init..] {
        let id = world.add(o);
        let (t, _, _) = tree.propagate(&world.ctx(), id, rng);
        tree = t;
        if world.pool.len() > window {
            let old = world.pool.oldest().unwrap();
            tree = world.retire(&tree, old, lambda);
        }
    }
    tree
}

pub fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Kolmogorov-Smirnov statistic of `u` against Uniform(0, 1).
pub fn ks_uniform(u: &mut [f64]) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| {
            let lo = v - i as f64 / n;
            let hi = (i + 1) as f64 / n - v;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 0.01.
pub fn ks_critical_01(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

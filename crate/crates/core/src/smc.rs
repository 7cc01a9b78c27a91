//! Particle cloud: resample by one-step predictive weight, propagate with
//! the local move kernel, then retire a point once the pool exceeds `w`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discard::{self, AdCache, DiscardPolicy, PolicyKind};
use crate::error::{Error, Result};
use crate::leaf::{LeafKind, LeafModel, Predictive, Vague};
use crate::obs::{Observation, Response};
use crate::pool::{PointId, Pool};
use crate::tree::{Ctx, Move, Rect, RetireMemo, Swap, Tree, TreePriorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudConfig {
    /// Number of particles `N`.
    pub particles: usize,
    /// Active pool capacity `w`; `None` keeps every point.
    pub window: Option<usize>,
    pub model: LeafModel,
    pub prior: TreePriorConfig,
    pub policy: DiscardPolicy,
    pub resampling: Resampling,
    pub seed: u64,
    /// Rebuild the AD cache from scratch every this many steps (0: never).
    pub resync_every: usize,
    /// Run per-particle phases on the rayon pool.
    pub parallel: bool,
}

impl CloudConfig {
    pub fn new(model: LeafModel, particles: usize, seed: u64) -> Self {
        let prior = TreePriorConfig::for_model(&model);
        let policy = DiscardPolicy::new(PolicyKind::Historical, 1.0);
        Self {
            particles,
            window: None,
            model,
            prior,
            policy,
            resampling: Resampling::Multinomial,
            seed,
            resync_every: 250,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidConfig("need at least one particle".into()));
        }
        if let Some(w) = self.window {
            if w < self.prior.min_leaf {
                return Err(Error::InvalidConfig(format!(
                    "window {w} is smaller than min_leaf {}",
                    self.prior.min_leaf
                )));
            }
        }
        if self.model.kind == LeafKind::Multinomial && self.model.classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        self.prior.validate()?;
        self.policy.validate(&self.model)
    }
}

/// What one update did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Log of the particle-averaged one-step predictive density of the new
    /// point (before it was absorbed).
    pub log_pred: f64,
    pub ess: f64,
    /// All weights were zero and resampling fell back to uniform.
    pub degenerate: bool,
    pub retired: Option<PointId>,
    pub grows: usize,
    pub prunes: usize,
}

/// `(sum w)^2 / sum w^2`.
pub fn ess(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Offspring counts for `n` draws proportional to `w` (already normalised).
pub fn resample_counts<R: Rng + ?Sized>(w: &[f64], scheme: Resampling, rng: &mut R) -> Vec<usize> {
    let n = w.len();
    let mut counts = vec![0usize; n];
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &v in w {
        acc += v;
        cdf.push(acc);
    }
    let total = acc;
    let pick = |u: f64| -> usize {
        let target = u * total;
        cdf.partition_point(|&c| c <= target).min(n - 1)
    };
    match scheme {
        Resampling::Multinomial => {
            for _ in 0..n {
                counts[pick(rng.random::<f64>())] += 1;
            }
        }
        Resampling::Systematic => {
            let u0: f64 = rng.random();
            for k in 0..n {
                counts[pick((k as f64 + u0) / n as f64)] += 1;
            }
        }
    }
    counts
}

/// Uniform mixture of per-particle leaf predictives.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePredictive {
    pub components: Vec<Predictive>,
}

impl MixturePredictive {
    pub fn density(&self, y: f64) -> f64 {
        let n = self.components.len() as f64;
        self.components.iter().map(|c| c.density(y)).sum::<f64>() / n
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let logs: Vec<f64> = self.components.iter().map(|c| c.log_density(y)).collect();
        log_mean_exp(&logs)
    }

    pub fn mean(&self) -> f64 {
        let n = self.components.len() as f64;
        self.components.iter().map(|c| c.mean()).sum::<f64>() / n
    }

    /// Mixture variance `E[var + mean^2] - mean^2`.
    pub fn variance(&self) -> f64 {
        let n = self.components.len() as f64;
        let m = self.mean();
        let second: f64 = self
            .components
            .iter()
            .map(|c| c.variance() + c.mean() * c.mean())
            .sum::<f64>()
            / n;
        (second - m * m).max(0.0)
    }

    /// Averaged class probabilities (classification).
    pub fn class_probs(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for c in &self.components {
            if let Predictive::Categorical(p) = c {
                if out.is_empty() {
                    out = vec![0.0; p.len()];
                }
                out.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            }
        }
        let n = self.components.len() as f64;
        out.iter_mut().for_each(|a| *a /= n);
        out
    }
}

pub(crate) fn log_mean_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = logs.iter().map(|l| (l - m).exp()).sum();
    m + (s / logs.len() as f64).ln()
}

#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub(crate) config: CloudConfig,
    pub(crate) particles: Vec<Tree>,
    pub(crate) pool: Pool,
    pub(crate) bbox: Rect,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) t: u64,
    pub(crate) cache: AdCache,
    pub(crate) last_weights: Vec<f64>,
    pub(crate) degenerate_steps: u64,
    pub(crate) retired: u64,
}

impl ParticleCloud {
    /// `N` single-leaf particles over the initial batch.
    pub fn init(first: &[Observation], config: CloudConfig) -> Result<Self> {
        config.validate()?;
        let need = config.prior.min_leaf.max(1);
        if first.len() < need {
            return Err(Error::TooFewObservations {
                needed: need,
                got: first.len(),
            });
        }
        if let Some(w) = config.window {
            if first.len() > w {
                return Err(Error::InvalidConfig(format!(
                    "initial batch of {} exceeds the window {w}",
                    first.len()
                )));
            }
        }
        let mut pool = Pool::new(config.model.dim);
        let mut ids = Vec::with_capacity(first.len());
        let mut bbox = Rect::around(&first[0].x);
        for obs in first {
            check_obs(&config.model, obs)?;
            ids.push(pool.insert(obs)?);
            bbox.expand(&obs.x);
        }
        let ad = config.policy.ad_kind();
        let ctx = Ctx {
            model: &config.model,
            prior: &config.prior,
            pool: &pool,
            bbox: &bbox,
            vague: pool.vague(),
            ad,
        };
        let root = Tree::new(&ctx, ids);
        let particles = vec![root; config.particles];
        let mut cache = AdCache::new(ad, &config.model);
        cache.recompute(&particles);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let t = first.len() as u64;
        Ok(Self {
            last_weights: vec![1.0; config.particles],
            config,
            particles,
            pool,
            bbox,
            rng,
            t,
            cache,
            degenerate_steps: 0,
            retired: 0,
        })
    }

    pub fn config(&self) -> &CloudConfig {
        &self.config
    }

    pub fn particles(&self) -> &[Tree] {
        &self.particles
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn bbox(&self) -> &Rect {
        &self.bbox
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn cache(&self) -> &AdCache {
        &self.cache
    }

    pub fn degenerate_steps(&self) -> u64 {
        self.degenerate_steps
    }

    pub fn retired_count(&self) -> u64 {
        self.retired
    }

    pub fn last_weights(&self) -> &[f64] {
        &self.last_weights
    }

    pub fn vague(&self) -> Vague {
        self.pool.vague()
    }

    /// Context for tree operations against the current pool.
    pub fn ctx(&self) -> Ctx<'_> {
        Ctx {
            model: &self.config.model,
            prior: &self.config.prior,
            pool: &self.pool,
            bbox: &self.bbox,
            vague: self.pool.vague(),
            ad: self.config.policy.ad_kind(),
        }
    }

    /// Particle-averaged predictive at `x`.
    pub fn predict(&self, x: &[f64]) -> MixturePredictive {
        let v = self.pool.vague();
        MixturePredictive {
            components: self
                .particles
                .iter()
                .map(|t| t.leaf_of(x).posterior.predictive(x, &v))
                .collect(),
        }
    }

    /// Averaged log predictive density of `(x, y)`.
    pub fn log_predictive(&self, x: &[f64], y: f64) -> f64 {
        let v = self.pool.vague();
        let logs: Vec<f64> = self
            .particles
            .iter()
            .map(|t| t.leaf_of(x).posterior.log_predictive(x, y, &v))
            .collect();
        log_mean_exp(&logs)
    }

    /// Absorb one observation.
    pub fn update(&mut self, obs: &Observation) -> Result<StepReport> {
        check_obs(&self.config.model, obs)?;
        let n = self.particles.len();
        let y = obs.y.as_f64();

        // (1) one-step predictive weights
        let vague = self.pool.vague();
        let logw: Vec<f64> = self
            .particles
            .iter()
            .map(|t| t.leaf_of(&obs.x).posterior.log_predictive(&obs.x, y, &vague))
            .collect();
        let log_pred = log_mean_exp(&logw);
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let degenerate = !max.is_finite();
        let w: Vec<f64> = if degenerate {
            self.degenerate_steps += 1;
            vec![1.0; n]
        } else {
            logw.iter()
                .map(|l| {
                    let v = (l - max).exp();
                    if v.is_finite() {
                        v
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let step_ess = ess(&w);
        self.last_weights = w.clone();

        // (2) resample
        let counts = resample_counts(&w, self.config.resampling, &mut self.rng);
        self.cache.on_resample(&self.particles, &counts);
        let mut next = Vec::with_capacity(n);
        for (t, &c) in self.particles.iter().zip(&counts) {
            for _ in 0..c {
                next.push(t.clone());
            }
        }
        self.particles = next;

        // (3)+(4) absorb the point and propagate
        self.bbox.expand(&obs.x);
        let id = self.pool.insert(obs)?;
        let seeds: Vec<u64> = (0..n).map(|_| self.rng.random()).collect();
        let ctx = Ctx {
            model: &self.config.model,
            prior: &self.config.prior,
            pool: &self.pool,
            bbox: &self.bbox,
            vague: self.pool.vague(),
            ad: self.config.policy.ad_kind(),
        };
        let step = |(t, s): (&Tree, &u64)| {
            let mut r = ChaCha8Rng::seed_from_u64(*s);
            t.propagate(&ctx, id, &mut r)
        };
        let results: Vec<(Tree, Swap, Move)> = if self.config.parallel {
            self.particles.par_iter().zip(&seeds).map(step).collect()
        } else {
            self.particles.iter().zip(&seeds).map(step).collect()
        };
        let mut grows = 0;
        let mut prunes = 0;
        let mut swaps = Vec::with_capacity(n);
        let mut trees = Vec::with_capacity(n);
        for (t, s, m) in results {
            match m {
                Move::Grow(_) => grows += 1,
                Move::Prune => prunes += 1,
                Move::Stay => {}
            }
            trees.push(t);
            swaps.push(s);
        }
        self.cache.on_swaps(&swaps);
        drop(swaps);
        self.particles = trees;
        self.t += 1;

        // (5) retire
        let mut retired = None;
        if let Some(w) = self.config.window {
            if self.pool.len() > w {
                let rid = discard::select_retiree(
                    &self.pool,
                    &self.config.policy,
                    &self.cache,
                    &mut self.rng,
                )?;
                self.retire(rid)?;
                retired = Some(rid);
            }
        }

        if self.config.resync_every > 0 && self.t % self.config.resync_every as u64 == 0 {
            self.cache.recompute(&self.particles);
        }

        Ok(StepReport {
            log_pred,
            ess: step_ess,
            degenerate,
            retired,
            grows,
            prunes,
        })
    }

    /// Retire pool point `id` in every particle with the configured `lambda`.
    pub fn retire(&mut self, id: PointId) -> Result<()> {
        if !self.pool.contains(id) {
            return Err(Error::UnknownPoint(id));
        }
        let lambda = self.config.policy.lambda;
        let ctx = Ctx {
            model: &self.config.model,
            prior: &self.config.prior,
            pool: &self.pool,
            bbox: &self.bbox,
            vague: self.pool.vague(),
            ad: self.config.policy.ad_kind(),
        };
        let mut memo = RetireMemo::default();
        let mut trees = Vec::with_capacity(self.particles.len());
        let mut swaps = Vec::with_capacity(self.particles.len());
        for t in &self.particles {
            let (nt, s) = t.retire(&ctx, id, lambda, &mut memo)?;
            trees.push(nt);
            swaps.push(s);
        }
        if lambda != 1.0 {
            self.cache.on_swaps(&swaps);
        }
        drop(swaps);
        drop(memo);
        self.particles = trees;
        self.cache.release(id);
        self.pool.remove(id)?;
        self.retired += 1;
        Ok(())
    }

    /// Largest relative gap between the AD cache and a rebuild.
    pub fn cache_error(&self) -> f64 {
        self.cache.max_rel_error(&self.particles, &self.pool)
    }

    /// Mean number of leaves and mean height over particles.
    pub fn tree_summary(&self) -> (f64, f64) {
        let n = self.particles.len() as f64;
        let leaves: usize = self.particles.iter().map(|t| t.leaf_count()).sum();
        let height: usize = self.particles.iter().map(|t| t.height()).sum();
        (leaves as f64 / n, height as f64 / n)
    }
}

fn check_obs(model: &LeafModel, obs: &Observation) -> Result<()> {
    if obs.x.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: obs.x.len(),
        });
    }
    match (model.kind, obs.y) {
        (LeafKind::Multinomial, Response::Class(c)) if (c as usize) < model.classes => {}
        (LeafKind::Multinomial, Response::Class(c)) => {
            return Err(Error::LabelOutOfRange {
                label: c,
                classes: model.classes,
            })
        }
        (LeafKind::Multinomial, Response::Real(_)) => {
            return Err(Error::TaskMismatch("real response for a classifier".into()))
        }
        (_, Response::Class(_)) => {
            return Err(Error::TaskMismatch("class label for a regression model".into()))
        }
        _ => {}
    }
    if !obs.is_finite() {
        return Err(Error::InvalidConfig("non-finite observation".into()));
    }
    Ok(())
}

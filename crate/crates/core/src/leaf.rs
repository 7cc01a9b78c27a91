//! Conjugate leaf models and retired-information bookkeeping.
//!
//! Regression leaves use the linear model `y ~ N(x~'b, s2)` over augmented
//! rows `x~ = [1, x]` (or `[1]` for the constant model) with the
//! non-informative baseline `pi0(b, s2) ∝ 1/s2`. Classification leaves are
//! multinomial with a Dirichlet baseline `a0 = (1, ..., 1)`.
//!
//! A leaf prior is just the sufficient statistics of the points retired into
//! it, so the posterior from (prior, active data) is the baseline posterior of
//! the union. Statistics are kept as raw running sums (count, Gram matrix,
//! `X'y`, `y'y`); `nu`, `s2` and the coefficients are derived on demand.
//! Multinomial priors store only the informative mass above the baseline,
//! which is the part forgetting decays.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky};
use crate::obs::{Observation, Response};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafKind {
    Constant,
    Linear,
    Multinomial,
}

/// Leaf model configuration shared by every leaf of every particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafModel {
    pub kind: LeafKind,
    /// Input dimension `d`.
    pub dim: usize,
    /// Number of classes (multinomial only).
    pub classes: usize,
    /// Dirichlet baseline pseudo-count per class.
    pub dirichlet_baseline: f64,
    /// Fewest combined effective points for a proper regression leaf.
    pub min_proper: f64,
    /// Condition-number threshold above which a linear leaf falls back to
    /// the constant model.
    pub max_condition: f64,
}

impl LeafModel {
    fn with_kind(kind: LeafKind, dim: usize, classes: usize) -> Self {
        Self {
            kind,
            dim,
            classes,
            dirichlet_baseline: 1.0,
            min_proper: 5.0,
            max_condition: 1e10,
        }
    }

    pub fn constant(dim: usize) -> Self {
        Self::with_kind(LeafKind::Constant, dim, 0)
    }

    pub fn linear(dim: usize) -> Self {
        Self::with_kind(LeafKind::Linear, dim, 0)
    }

    pub fn multinomial(dim: usize, classes: usize) -> Self {
        Self::with_kind(LeafKind::Multinomial, dim, classes)
    }

    pub fn is_regression(&self) -> bool {
        self.kind != LeafKind::Multinomial
    }

    /// Length of the augmented design row.
    pub fn coef_dim(&self) -> usize {
        match self.kind {
            LeafKind::Constant => 1,
            LeafKind::Linear => self.dim + 1,
            LeafKind::Multinomial => 0,
        }
    }

    /// Write the augmented row `[1, x]` (or `[1]`) into `row`.
    pub fn augment(&self, x: &[f64], row: &mut Vec<f64>) {
        row.clear();
        row.push(1.0);
        if self.kind == LeafKind::Linear {
            row.extend_from_slice(x);
        }
    }

    pub fn empty_prior(&self) -> LeafPrior {
        match self.kind {
            LeafKind::Multinomial => LeafPrior::Multinomial(MultinomialPrior {
                counts: vec![0.0; self.classes],
            }),
            _ => LeafPrior::Regression(RegressionPrior::empty(self.coef_dim())),
        }
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: obs.x.len(),
            });
        }
        match (self.kind, obs.y) {
            (LeafKind::Multinomial, Response::Class(c)) if (c as usize) < self.classes => Ok(()),
            (LeafKind::Multinomial, Response::Class(c)) => Err(Error::LabelOutOfRange {
                label: c,
                classes: self.classes,
            }),
            (LeafKind::Multinomial, Response::Real(_)) => Err(Error::TaskMismatch(
                "real response for a multinomial leaf".into(),
            )),
            (_, Response::Real(_)) => Ok(()),
            (_, Response::Class(_)) => Err(Error::TaskMismatch(
                "class label for a regression leaf".into(),
            )),
        }
    }
}

/// Retired (or active) regression sufficient statistics over augmented rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionPrior {
    /// Effective count; fractional under forgetting.
    pub n_eff: f64,
    /// Row-major `p x p` Gram matrix `X'X`.
    pub gram: Vec<f64>,
    /// `X'y`.
    pub xy: Vec<f64>,
    /// `sum y^2`.
    pub r: f64,
}

impl RegressionPrior {
    pub fn empty(p: usize) -> Self {
        Self {
            n_eff: 0.0,
            gram: vec![0.0; p * p],
            xy: vec![0.0; p],
            r: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_eff == 0.0
    }

    /// `self <- lambda * self + (row, y)`.
    pub fn decay_and_add(&mut self, row: &[f64], y: f64, lambda: f64) {
        let p = self.dim();
        debug_assert_eq!(row.len(), p);
        if lambda != 1.0 {
            self.scale(lambda);
        }
        for i in 0..p {
            let ri = row[i];
            for j in 0..p {
                self.gram[i * p + j] += ri * row[j];
            }
            self.xy[i] += ri * y;
        }
        self.r += y * y;
        self.n_eff += 1.0;
    }

    pub fn add_row(&mut self, row: &[f64], y: f64) {
        self.decay_and_add(row, y, 1.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.gram.iter_mut().for_each(|g| *g *= s);
        self.xy.iter_mut().for_each(|v| *v *= s);
        self.r *= s;
        self.n_eff *= s;
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dim(), other.dim());
        self.gram
            .iter_mut()
            .zip(&other.gram)
            .for_each(|(a, b)| *a += b);
        self.xy.iter_mut().zip(&other.xy).for_each(|(a, b)| *a += b);
        self.r += other.r;
        self.n_eff += other.n_eff;
    }
}

/// Dirichlet prior stored as informative mass above the baseline `a0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialPrior {
    pub counts: Vec<f64>,
}

impl MultinomialPrior {
    /// Full Dirichlet parameter `a = a0 + counts`.
    pub fn alpha(&self, model: &LeafModel) -> Vec<f64> {
        self.counts
            .iter()
            .map(|c| c + model.dirichlet_baseline)
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Per-leaf sufficient statistics. The same representation holds retired
/// information (the informative prior) and the statistics of active data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LeafPrior {
    Regression(RegressionPrior),
    Multinomial(MultinomialPrior),
}

impl LeafPrior {
    /// Effective amount of information held: `n_eff`, or total informative
    /// class mass.
    pub fn strength(&self) -> f64 {
        match self {
            LeafPrior::Regression(r) => r.n_eff,
            LeafPrior::Multinomial(m) => m.total(),
        }
    }

    /// Add one point (weight 1) to these statistics.
    pub fn push(&mut self, model: &LeafModel, x: &[f64], y: f64, row: &mut Vec<f64>) {
        self.push_decayed(model, x, y, 1.0, row)
    }

    pub(crate) fn push_decayed(
        &mut self,
        model: &LeafModel,
        x: &[f64],
        y: f64,
        lambda: f64,
        row: &mut Vec<f64>,
    ) {
        match self {
            LeafPrior::Regression(r) => {
                model.augment(x, row);
                r.decay_and_add(row, y, lambda);
            }
            LeafPrior::Multinomial(m) => {
                if lambda != 1.0 {
                    m.counts.iter_mut().for_each(|c| *c *= lambda);
                }
                m.counts[y as usize] += 1.0;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            LeafPrior::Regression(r) => r.scale(s),
            LeafPrior::Multinomial(m) => m.counts.iter_mut().for_each(|c| *c *= s),
        }
        out
    }

    /// Elementwise sum; panics on mismatched shapes (callers check first).
    pub(crate) fn add_assign(&mut self, other: &Self) {
        match (self, other) {
            (LeafPrior::Regression(a), LeafPrior::Regression(b)) => a.add_assign(b),
            (LeafPrior::Multinomial(a), LeafPrior::Multinomial(b)) => a
                .counts
                .iter_mut()
                .zip(&b.counts)
                .for_each(|(x, y)| *x += y),
            _ => panic!("mixed leaf statistics"),
        }
    }

    fn same_shape(&self, other: &Self) -> bool {
        match (self, other) {
            (LeafPrior::Regression(a), LeafPrior::Regression(b)) => a.dim() == b.dim(),
            (LeafPrior::Multinomial(a), LeafPrior::Multinomial(b)) => {
                a.counts.len() == b.counts.len()
            }
            _ => false,
        }
    }
}

/// Fold one observation into a prior with forgetting factor `lambda`.
///
/// Regression: `G <- lambda G + x~x~'`, `Xy <- lambda Xy + x~ y`,
/// `r <- lambda r + y^2`, `n_eff <- lambda n_eff + 1`.
/// Multinomial: `a <- a0 + lambda (a - a0) + z`.
pub fn retire_into_prior(
    prior: &LeafPrior,
    model: &LeafModel,
    obs: &Observation,
    lambda: f64,
) -> Result<LeafPrior> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidLambda(lambda));
    }
    model.check_obs(obs)?;
    if !prior.same_shape(&model.empty_prior()) {
        return Err(Error::ModelMismatch("prior does not match leaf model".into()));
    }
    let mut out = prior.clone();
    let mut row = Vec::with_capacity(model.coef_dim());
    out.push_decayed(model, &obs.x, obs.y.as_f64(), lambda, &mut row);
    Ok(out)
}

/// Additive pooling of two sibling priors (prune).
pub fn pool_priors(left: &LeafPrior, right: &LeafPrior) -> Result<LeafPrior> {
    if !left.same_shape(right) {
        return Err(Error::ModelMismatch("cannot pool priors of different shape".into()));
    }
    let mut out = left.clone();
    out.add_assign(right);
    Ok(out)
}

/// Proportional split of a prior between two children (grow). `alpha` is
/// the fraction of active points going left.
pub fn split_prior(prior: &LeafPrior, alpha: f64) -> Result<(LeafPrior, LeafPrior)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidFraction(alpha));
    }
    Ok((prior.scaled(alpha), prior.scaled(1.0 - alpha)))
}

/// Predictive used where a regression leaf is improper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vague {
    pub mean: f64,
    pub var: f64,
}

impl Default for Vague {
    fn default() -> Self {
        Self { mean: 0.0, var: 1.0 }
    }
}

impl Vague {
    fn log_lik_stats(&self, n: f64, sum_y: f64, sum_y2: f64) -> f64 {
        let ss = sum_y2 - 2.0 * self.mean * sum_y + n * self.mean * self.mean;
        -0.5 * n * (LN_2PI + self.var.ln()) - 0.5 * ss.max(0.0) / self.var
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegressionFit {
    Linear,
    /// Constant model, either requested or as the fallback for a singular
    /// Gram matrix.
    Constant,
    /// Too little information; predictions come from [`Vague`]. `coef` and
    /// `rss` still describe the least-squares fit when one exists.
    Improper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPosterior {
    pub fit: RegressionFit,
    /// Combined effective count (retired + active).
    pub n: f64,
    /// Degrees of freedom `n - p` of the fitted model.
    pub nu: f64,
    /// `beta`, intercept first.
    pub coef: Vec<f64>,
    /// Residual sum of squares `r - Xy' G^-1 Xy`.
    pub rss: f64,
    pub s2: f64,
    log_marginal: f64,
    chol: Option<Cholesky>,
    sum_y: f64,
    sum_y2: f64,
}

impl RegressionPosterior {
    pub fn is_proper(&self) -> bool {
        self.fit != RegressionFit::Improper
    }

    /// Number of slope coefficients actually fitted (`m` in the ALC formula).
    pub fn slopes(&self) -> usize {
        self.coef.len().saturating_sub(1)
    }

    /// Augmented row for `x` under the fitted model.
    pub fn row(&self, x: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.coef.len());
        row.push(1.0);
        if self.coef.len() > 1 {
            row.extend_from_slice(x);
        }
        row
    }

    /// `G^-1 v` for the fitted Gram matrix.
    pub fn solve_gram(&self, v: &[f64]) -> Option<Vec<f64>> {
        self.chol.as_ref().map(|c| c.solve(v))
    }

    /// `v' G^-1 v`.
    pub fn quad_gram(&self, v: &[f64]) -> Option<f64> {
        self.chol.as_ref().map(|c| c.quad_inv(v))
    }

    pub fn log_det_gram(&self) -> Option<f64> {
        self.chol.as_ref().map(|c| c.log_det)
    }

    pub fn log_marginal(&self, vague: &Vague) -> f64 {
        if self.is_proper() {
            self.log_marginal
        } else {
            vague.log_lik_stats(self.n, self.sum_y, self.sum_y2)
        }
    }

    pub fn predictive(&self, x: &[f64], vague: &Vague) -> Predictive {
        match &self.chol {
            Some(c) if self.is_proper() => {
                let row = self.row(x);
                let loc = dot(&row, &self.coef);
                let q = c.quad_inv(&row);
                Predictive::StudentT {
                    loc,
                    scale: (self.s2 * (1.0 + q)).sqrt(),
                    df: self.nu,
                }
            }
            _ => Predictive::Vague {
                mean: vague.mean,
                var: vague.var,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialPosterior {
    /// Combined Dirichlet parameter (baseline + retired + active counts).
    pub alpha: Vec<f64>,
    pub probs: Vec<f64>,
    log_marginal: f64,
}

impl MultinomialPosterior {
    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeafPosterior {
    Regression(RegressionPosterior),
    Multinomial(MultinomialPosterior),
}

impl LeafPosterior {
    pub fn is_proper(&self) -> bool {
        match self {
            LeafPosterior::Regression(r) => r.is_proper(),
            LeafPosterior::Multinomial(_) => true,
        }
    }

    /// Log marginal likelihood of everything the leaf has seen (retired
    /// pseudo-data and active data) under the baseline prior.
    pub fn log_marginal(&self, vague: &Vague) -> f64 {
        match self {
            LeafPosterior::Regression(r) => r.log_marginal(vague),
            LeafPosterior::Multinomial(m) => m.log_marginal,
        }
    }

    pub fn predictive(&self, x: &[f64], vague: &Vague) -> Predictive {
        match self {
            LeafPosterior::Regression(r) => r.predictive(x, vague),
            LeafPosterior::Multinomial(m) => Predictive::Categorical(m.probs.clone()),
        }
    }

    /// Log predictive density of `y` at `x` without materialising a
    /// [`Predictive`].
    pub fn log_predictive(&self, x: &[f64], y: f64, vague: &Vague) -> f64 {
        match self {
            LeafPosterior::Multinomial(m) => m.probs[y as usize].ln(),
            LeafPosterior::Regression(r) => r.predictive(x, vague).log_density(y),
        }
    }
}

/// Posterior predictive at a single input.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictive {
    StudentT { loc: f64, scale: f64, df: f64 },
    /// Improper leaf: the vague fallback.
    Vague { mean: f64, var: f64 },
    Categorical(Vec<f64>),
}

impl Predictive {
    /// Log density of a real response, or log probability of a class index.
    pub fn log_density(&self, y: f64) -> f64 {
        match self {
            Predictive::StudentT { loc, scale, df } => student_t_ln_pdf(y, *loc, *scale, *df),
            Predictive::Vague { mean, var } => {
                -0.5 * (LN_2PI + var.ln()) - 0.5 * (y - mean).powi(2) / var
            }
            Predictive::Categorical(p) => p.get(y as usize).map_or(f64::NEG_INFINITY, |p| p.ln()),
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }

    pub fn mean(&self) -> f64 {
        match self {
            Predictive::StudentT { loc, .. } => *loc,
            Predictive::Vague { mean, .. } => *mean,
            Predictive::Categorical(p) => p.iter().enumerate().map(|(j, q)| j as f64 * q).sum(),
        }
    }

    /// Predictive variance; infinite for Student-t with `df <= 2`.
    pub fn variance(&self) -> f64 {
        match self {
            Predictive::StudentT { scale, df, .. } => {
                if *df > 2.0 {
                    scale * scale * df / (df - 2.0)
                } else {
                    f64::INFINITY
                }
            }
            Predictive::Vague { var, .. } => *var,
            Predictive::Categorical(p) => {
                let m = self.mean();
                p.iter()
                    .enumerate()
                    .map(|(j, q)| q * (j as f64 - m).powi(2))
                    .sum()
            }
        }
    }

    pub fn is_vague(&self) -> bool {
        matches!(self, Predictive::Vague { .. })
    }
}

pub fn student_t_ln_pdf(y: f64, loc: f64, scale: f64, df: f64) -> f64 {
    let z = (y - loc) / scale;
    ln_gamma(0.5 * (df + 1.0))
        - ln_gamma(0.5 * df)
        - 0.5 * (df * std::f64::consts::PI).ln()
        - scale.ln()
        - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
}

/// Posterior from the combined statistics (prior + active).
pub fn posterior_from_stats(model: &LeafModel, combined: &LeafPrior) -> LeafPosterior {
    match combined {
        LeafPrior::Multinomial(m) => {
            let alpha = m.alpha(model);
            let total: f64 = alpha.iter().sum();
            let probs = alpha.iter().map(|a| a / total).collect();
            let a0 = model.dirichlet_baseline;
            let k = alpha.len() as f64;
            let log_marginal = ln_gamma(k * a0) - ln_gamma(total)
                + alpha.iter().map(|a| ln_gamma(*a) - ln_gamma(a0)).sum::<f64>();
            LeafPosterior::Multinomial(MultinomialPosterior {
                alpha,
                probs,
                log_marginal,
            })
        }
        LeafPrior::Regression(s) => LeafPosterior::Regression(regression_posterior(model, s)),
    }
}

fn regression_posterior(model: &LeafModel, s: &RegressionPrior) -> RegressionPosterior {
    let n = s.n_eff;
    let sum_y = s.xy[0];
    let improper = || RegressionPosterior {
        fit: RegressionFit::Improper,
        n,
        nu: n - 1.0,
        coef: Vec::new(),
        rss: 0.0,
        s2: 0.0,
        log_marginal: f64::NAN,
        chol: None,
        sum_y,
        sum_y2: s.r,
    };
    let p = s.dim();
    let mut post = 'fit: {
        if p > 1 && n - p as f64 >= 1.0 {
            if let Some(chol) = Cholesky::factor(&s.gram, p) {
                if chol.cond <= model.max_condition {
                    break 'fit fit(RegressionFit::Linear, n, chol, &s.xy, s.r);
                }
            }
        }
        // constant model, or fallback from a singular linear leaf
        if n - 1.0 < 1.0 {
            break 'fit improper();
        }
        match Cholesky::factor(&[s.gram[0]], 1) {
            Some(chol) => fit(RegressionFit::Constant, n, chol, &s.xy[..1], s.r),
            None => improper(),
        }
    };
    // too little data to trust: keep the descriptive fit, predict vaguely
    if !(n >= model.min_proper) {
        post.fit = RegressionFit::Improper;
    }
    post
}

fn fit(kind: RegressionFit, n: f64, chol: Cholesky, xy: &[f64], r: f64) -> RegressionPosterior {
    let p = chol.p;
    let z = chol.forward(xy);
    let explained: f64 = z.iter().map(|v| v * v).sum();
    let rss = (r - explained).max(1e-12 * r).max(f64::MIN_POSITIVE);
    let mut coef = z;
    chol.backward(&mut coef);
    let nu = n - p as f64;
    let s2 = rss / nu;
    let half_nu = 0.5 * nu;
    let log_marginal =
        -half_nu * LN_2PI - 0.5 * chol.log_det + ln_gamma(half_nu) - half_nu * (0.5 * rss).ln();
    RegressionPosterior {
        fit: kind,
        n,
        nu,
        coef,
        rss,
        s2,
        log_marginal,
        chol: Some(chol),
        sum_y: xy[0],
        sum_y2: r,
    }
}

/// Sufficient statistics of a set of observations.
pub fn stats_of(model: &LeafModel, active: &[Observation]) -> Result<LeafPrior> {
    let mut stats = model.empty_prior();
    let mut row = Vec::with_capacity(model.coef_dim());
    for obs in active {
        model.check_obs(obs)?;
        stats.push(model, &obs.x, obs.y.as_f64(), &mut row);
    }
    Ok(stats)
}

/// Leaf posterior given an informative prior and the leaf's active data.
pub fn posterior(
    model: &LeafModel,
    prior: &LeafPrior,
    active: &[Observation],
) -> Result<LeafPosterior> {
    let mut combined = stats_of(model, active)?;
    if !combined.same_shape(prior) {
        return Err(Error::ModelMismatch("prior does not match leaf model".into()));
    }
    combined.add_assign(prior);
    Ok(posterior_from_stats(model, &combined))
}

pub fn predictive(post: &LeafPosterior, x: &[f64], vague: &Vague) -> Predictive {
    post.predictive(x, vague)
}

/// `log p(y^eta | x^eta)` of retired pseudo-data plus active data under the
/// baseline prior. Retiring a point (lambda = 1) leaves it unchanged.
pub fn log_marginal_likelihood(
    model: &LeafModel,
    prior: &LeafPrior,
    active: &[Observation],
    vague: &Vague,
) -> Result<f64> {
    Ok(posterior(model, prior, active)?.log_marginal(vague))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(x: &[f64], y: f64) -> Observation {
        Observation::regression(x.to_vec(), y, 0)
    }

    #[test]
    fn multinomial_retire_increments_count() {
        let m = LeafModel::multinomial(1, 3);
        let p = m.empty_prior();
        let p = retire_into_prior(&p, &m, &Observation::classification(vec![0.0], 1, 0), 1.0)
            .unwrap();
        let LeafPrior::Multinomial(mp) = &p else {
            panic!()
        };
        assert_eq!(mp.alpha(&m), vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn forgetting_count_update() {
        let m = LeafModel::constant(1);
        let mut p = m.empty_prior();
        for _ in 0..5 {
            p = retire_into_prior(&p, &m, &reg(&[0.0], 1.0), 1.0).unwrap();
        }
        assert_eq!(p.strength(), 5.0);
        let p = retire_into_prior(&p, &m, &reg(&[0.0], 1.0), 0.9).unwrap();
        assert!((p.strength() - 5.5).abs() < 1e-15);
    }

    #[test]
    fn constant_running_sums() {
        let m = LeafModel::constant(2);
        let p = m.empty_prior();
        let p = retire_into_prior(&p, &m, &reg(&[0.3, 0.1], 1.0), 1.0).unwrap();
        let p = retire_into_prior(&p, &m, &reg(&[0.7, 0.2], 3.0), 1.0).unwrap();
        let LeafPrior::Regression(r) = p else { panic!() };
        assert_eq!(r.gram, vec![2.0]);
        assert_eq!(r.xy, vec![4.0]);
        assert_eq!(r.r, 10.0);
        assert_eq!(r.n_eff, 2.0);
    }

    #[test]
    fn retire_rejects_bad_inputs() {
        let m = LeafModel::linear(2);
        let p = m.empty_prior();
        assert!(matches!(
            retire_into_prior(&p, &m, &reg(&[1.0], 1.0), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            retire_into_prior(&p, &m, &reg(&[1.0, 2.0], 1.0), 1.5),
            Err(Error::InvalidLambda(_))
        ));
        assert!(retire_into_prior(&p, &m, &reg(&[1.0, 2.0], 1.0), -0.1).is_err());
    }

    #[test]
    fn lambda_zero_keeps_only_the_new_point() {
        let m = LeafModel::constant(1);
        let mut p = m.empty_prior();
        for y in [1.0, 2.0, 3.0] {
            p = retire_into_prior(&p, &m, &reg(&[0.0], y), 1.0).unwrap();
        }
        let p = retire_into_prior(&p, &m, &reg(&[0.0], 7.0), 0.0).unwrap();
        let LeafPrior::Regression(r) = p else { panic!() };
        assert_eq!((r.n_eff, r.xy[0], r.r), (1.0, 7.0, 49.0));
    }

    #[test]
    fn pool_and_split() {
        let m = LeafModel::linear(1);
        let mut a = m.empty_prior();
        let mut b = m.empty_prior();
        let mut row = Vec::new();
        a.push(&m, &[0.5], 1.0, &mut row);
        a.push(&m, &[1.5], 2.0, &mut row);
        for x in [0.1, 0.2, 0.3] {
            b.push(&m, &[x], x, &mut row);
        }
        let pooled = pool_priors(&a, &b).unwrap();
        assert_eq!(pooled.strength(), 5.0);
        assert_eq!(pool_priors(&a, &m.empty_prior()).unwrap(), a);

        let (l, r) = split_prior(&m.empty_prior().scaled(0.0), 0.3).unwrap();
        assert_eq!(l.strength(), 0.0);
        assert_eq!(r.strength(), 0.0);

        let mut ten = m.empty_prior();
        for i in 0..10 {
            ten.push(&m, &[i as f64], 1.0, &mut row);
        }
        let (l, r) = split_prior(&ten, 0.6).unwrap();
        assert!((l.strength() - 6.0).abs() < 1e-12);
        assert!((r.strength() - 4.0).abs() < 1e-12);
        let (l, r) = split_prior(&ten, 1.0).unwrap();
        assert_eq!(l, ten);
        assert_eq!(r.strength(), 0.0);
        assert!(split_prior(&ten, 1.2).is_err());
        assert!(pool_priors(&ten, &LeafModel::multinomial(1, 2).empty_prior()).is_err());
    }

    #[test]
    fn multinomial_split_halves_informative_mass() {
        let m = LeafModel::multinomial(1, 2);
        let p = LeafPrior::Multinomial(MultinomialPrior {
            counts: vec![1.0, 3.0],
        });
        let (l, r) = split_prior(&p, 0.5).unwrap();
        for c in [l, r] {
            let LeafPrior::Multinomial(c) = c else { panic!() };
            assert_eq!(c.alpha(&m), vec![1.5, 2.5]);
        }
    }

    #[test]
    fn constant_posterior_from_retired_only() {
        // retired y = 1, 3; min_proper lowered so two points suffice
        let mut m = LeafModel::constant(1);
        m.min_proper = 2.0;
        let prior = LeafPrior::Regression(RegressionPrior {
            n_eff: 2.0,
            gram: vec![2.0],
            xy: vec![4.0],
            r: 10.0,
        });
        let LeafPosterior::Regression(post) = posterior(&m, &prior, &[]).unwrap() else {
            panic!()
        };
        assert_eq!(post.fit, RegressionFit::Constant);
        assert!((post.coef[0] - 2.0).abs() < 1e-15);
        assert!((post.rss - 2.0).abs() < 1e-12);
        assert_eq!(post.nu, 1.0);
    }

    #[test]
    fn multinomial_laplace_rule_and_marginals() {
        let m = LeafModel::multinomial(1, 2);
        let one = Observation::classification(vec![0.0], 0, 0);
        let post = posterior(&m, &m.empty_prior(), &[one.clone()]).unwrap();
        let LeafPosterior::Multinomial(mp) = &post else {
            panic!()
        };
        assert!((mp.probs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((mp.probs[1] - 1.0 / 3.0).abs() < 1e-15);

        let v = Vague::default();
        let lm1 = log_marginal_likelihood(&m, &m.empty_prior(), &[one.clone()], &v).unwrap();
        assert!((lm1 - 0.5f64.ln()).abs() < 1e-12);
        let lm2 =
            log_marginal_likelihood(&m, &m.empty_prior(), &[one.clone(), one.clone()], &v).unwrap();
        assert!((lm2 - (0.5f64 * 2.0 / 3.0).ln()).abs() < 1e-12);

        let uniform = posterior(&LeafModel::multinomial(1, 3), &LeafModel::multinomial(1, 3).empty_prior(), &[])
            .unwrap()
            .predictive(&[0.0], &v);
        let Predictive::Categorical(p) = uniform else { panic!() };
        for q in p {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_fit_on_exact_line() {
        let m = LeafModel::linear(1);
        let mut prior = m.empty_prior();
        let pts: Vec<_> = [0.0, 1.0, 2.0, 3.0, 4.0, 5.5]
            .iter()
            .map(|&x| reg(&[x], 2.0 * x + 1.0))
            .collect();
        for o in &pts {
            prior = retire_into_prior(&prior, &m, o, 1.0).unwrap();
        }
        let post = posterior(&m, &prior, &[]).unwrap();
        let LeafPosterior::Regression(r) = &post else {
            panic!()
        };
        assert_eq!(r.fit, RegressionFit::Linear);
        assert!((r.coef[0] - 1.0).abs() < 1e-9);
        assert!((r.coef[1] - 2.0).abs() < 1e-9);
        assert!(r.s2 < 1e-9);
        let pred = post.predictive(&[5.0], &Vague::default());
        assert!((pred.mean() - 11.0).abs() < 1e-8);
    }

    #[test]
    fn symmetric_constant_leaf_predicts_zero() {
        let m = LeafModel::constant(1);
        let data: Vec<_> = [-1.0, 1.0, -1.0, 1.0, -1.0, 1.0]
            .iter()
            .map(|&y| reg(&[0.0], y))
            .collect();
        let post = posterior(&m, &m.empty_prior(), &data).unwrap();
        let pred = post.predictive(&[0.3], &Vague::default());
        assert!(pred.mean().abs() < 1e-15);
        assert!(pred.variance() > 0.0);
    }

    #[test]
    fn collinear_linear_leaf_falls_back_to_constant() {
        let m = LeafModel::linear(2);
        // x2 = 2 x1 exactly
        let data: Vec<_> = (0..8)
            .map(|i| {
                let a = i as f64;
                reg(&[a, 2.0 * a], a + 0.1 * (i % 3) as f64)
            })
            .collect();
        let LeafPosterior::Regression(r) = posterior(&m, &m.empty_prior(), &data).unwrap() else {
            panic!()
        };
        assert_eq!(r.fit, RegressionFit::Constant);
    }

    #[test]
    fn too_few_points_is_improper_and_vague() {
        let m = LeafModel::constant(1);
        let data: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&y| reg(&[0.0], y)).collect();
        let post = posterior(&m, &m.empty_prior(), &data).unwrap();
        assert!(!post.is_proper());
        let v = Vague { mean: 2.0, var: 4.0 };
        assert!(post.predictive(&[0.0], &v).is_vague());
        let expected: f64 = [1.0f64, 2.0, 3.0]
            .iter()
            .map(|y| -0.5 * (LN_2PI + 4f64.ln()) - (y - 2.0).powi(2) / 8.0)
            .sum();
        assert!((post.log_marginal(&v) - expected).abs() < 1e-12);
    }

    #[test]
    fn marginal_is_chain_of_predictives() {
        let m = LeafModel::linear(1);
        let v = Vague::default();
        let data: Vec<_> = (0..12)
            .map(|i| {
                let x = (i as f64 * 0.37).sin() * 2.0;
                reg(&[x], 0.5 * x - 1.0 + (i as f64 * 1.7).cos())
            })
            .collect();
        let base = 6;
        let lm_base = log_marginal_likelihood(&m, &m.empty_prior(), &data[..base], &v).unwrap();
        let mut chain = lm_base;
        for k in base..data.len() {
            let post = posterior(&m, &m.empty_prior(), &data[..k]).unwrap();
            chain += post.log_predictive(&data[k].x, data[k].y.as_f64(), &v);
        }
        let lm_all = log_marginal_likelihood(&m, &m.empty_prior(), &data, &v).unwrap();
        assert!((chain - lm_all).abs() < 1e-9 * lm_all.abs().max(1.0));
    }

    #[test]
    fn student_t_matches_statrs() {
        use statrs::distribution::{Continuous, StudentsT};
        let d = StudentsT::new(0.7, 1.3, 4.5).unwrap();
        for y in [-3.0, 0.0, 0.7, 2.2] {
            assert!((student_t_ln_pdf(y, 0.7, 1.3, 4.5) - d.ln_pdf(y)).abs() < 1e-12);
        }
    }
}

//! Retirement policies and the particle-averaged AD statistic cache.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leaf::{LeafKind, LeafModel, LeafPosterior};
use crate::pool::{PointId, Pool};
use crate::tree::{Ctx, LeafNode, Node, Rect, Swap, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Historical,
    Random,
    Alc,
    Entropy,
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "historical" | "oldest" => Ok(Self::Historical),
            "random" => Ok(Self::Random),
            "alc" => Ok(Self::Alc),
            "entropy" => Ok(Self::Entropy),
            other => Err(Error::InvalidConfig(format!("unknown discard policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscardPolicy {
    pub kind: PolicyKind,
    /// Forgetting factor applied when folding into leaf priors.
    pub lambda: f64,
}

impl DiscardPolicy {
    pub fn new(kind: PolicyKind, lambda: f64) -> Self {
        Self { kind, lambda }
    }

    pub fn validate(&self, model: &LeafModel) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidLambda(self.lambda));
        }
        match (self.kind, model.kind) {
            (PolicyKind::Alc, LeafKind::Multinomial) => Err(Error::InvalidConfig(
                "alc discarding needs regression leaves".into(),
            )),
            (PolicyKind::Entropy, k) if k != LeafKind::Multinomial => Err(Error::InvalidConfig(
                "entropy discarding needs multinomial leaves".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn ad_kind(&self) -> AdKind {
        match self.kind {
            PolicyKind::Alc => AdKind::Alc,
            PolicyKind::Entropy => AdKind::Entropy,
            _ => AdKind::None,
        }
    }
}

/// Which per-leaf statistic the trees maintain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdKind {
    None,
    Alc,
    Entropy,
}

/// Per-leaf cached statistic. Entropy reads the class probabilities straight
/// from the leaf posterior, so only ALC values are stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AdStat {
    None,
    /// `delta sigma^2` at each active point, parallel to `active`.
    Alc(Vec<f64>),
}

impl AdStat {
    pub(crate) fn without(&self, pos: usize) -> AdStat {
        match self {
            AdStat::None => AdStat::None,
            AdStat::Alc(v) => {
                let mut v = v.clone();
                v.remove(pos);
                AdStat::Alc(v)
            }
        }
    }
}

pub(crate) fn leaf_ad(ctx: &Ctx, leaf: &LeafNode) -> AdStat {
    match ctx.ad {
        AdKind::Alc => AdStat::Alc(alc_leaf(
            &leaf.posterior,
            &leaf.rect,
            leaf.active.iter().map(|&id| ctx.pool.x(id)),
        )),
        _ => AdStat::None,
    }
}

/// [`alc_reduction`] at many points of one leaf, sharing the inverse Gram
/// matrix and the rectangle moments.
pub fn alc_leaf<'a>(
    post: &LeafPosterior,
    rect: &Rect,
    xs: impl ExactSizeIterator<Item = &'a [f64]>,
) -> Vec<f64> {
    let n_pts = xs.len();
    let LeafPosterior::Regression(p) = post else {
        return vec![f64::INFINITY; n_pts];
    };
    let m = p.slopes();
    if !p.is_proper() || p.n <= m as f64 + 3.0 {
        return vec![f64::INFINITY; n_pts];
    }
    let dim = p.coef.len();
    let mut inv = vec![0.0; dim * dim];
    let mut e = vec![0.0; dim];
    for j in 0..dim {
        e.fill(0.0);
        e[j] = 1.0;
        let Some(col) = p.solve_gram(&e) else {
            return vec![f64::INFINITY; n_pts];
        };
        for i in 0..dim {
            inv[i * dim + j] = col[i];
        }
    }
    // vol * [(c + g'mid)^2 + sum g_i^2 w_i^2 / 12]
    let d = rect.dim();
    let mut vol = 1.0;
    for i in 0..d {
        vol *= rect.hi[i] - rect.lo[i];
    }
    let mid: Vec<f64> = (0..d).map(|i| 0.5 * (rect.lo[i] + rect.hi[i])).collect();
    let w2: Vec<f64> = (0..d).map(|i| (rect.hi[i] - rect.lo[i]).powi(2) / 12.0).collect();
    let factor = p.rss / (p.n - m as f64 - 3.0);
    let mut row = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    xs.map(|x| {
        if vol == 0.0 {
            return 0.0;
        }
        row[0] = 1.0;
        row[1..].copy_from_slice(&x[..dim - 1]);
        for i in 0..dim {
            g[i] = inv[i * dim..(i + 1) * dim]
                .iter()
                .zip(&row)
                .map(|(a, b)| a * b)
                .sum();
        }
        let q: f64 = row.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut lin = g[0];
        let mut spread = 0.0;
        for i in 0..dim - 1 {
            lin += g[i + 1] * mid[i];
            spread += g[i + 1] * g[i + 1] * w2[i];
        }
        (factor * vol * (lin * lin + spread) / (1.0 + q)).max(0.0)
    })
    .collect()
}

/// `int_rect (c + sum_i g_i z_i)^2 dz`. Missing trailing entries of `gx` are
/// zero.
pub fn rect_integral(rect: &Rect, gx: &[f64], c: f64) -> f64 {
    let m = rect.dim();
    assert!(gx.len() <= m, "gradient longer than the rectangle");
    let mut vol = 1.0;
    let mut lin = c;
    let mut spread = 0.0;
    for i in 0..m {
        let (a, b) = (rect.lo[i], rect.hi[i]);
        assert!(a <= b, "inverted rectangle");
        let w = b - a;
        if w == 0.0 {
            return 0.0;
        }
        vol *= w;
        let g = gx.get(i).copied().unwrap_or(0.0);
        lin += g * 0.5 * (a + b);
        spread += g * g * w * w / 12.0;
    }
    vol * (lin * lin + spread)
}

/// Expected reduction in predictive variance over the leaf rectangle from
/// adding a point at `x`. `+inf` for improper leaves or when `n <= m + 3`.
pub fn alc_reduction(post: &LeafPosterior, rect: &Rect, x: &[f64]) -> f64 {
    let LeafPosterior::Regression(p) = post else {
        return f64::INFINITY;
    };
    if !p.is_proper() {
        return f64::INFINITY;
    }
    let m = p.slopes() as f64;
    if p.n <= m + 3.0 {
        return f64::INFINITY;
    }
    let row = p.row(x);
    let Some(g) = p.solve_gram(&row) else {
        return f64::INFINITY;
    };
    let q: f64 = row.iter().zip(&g).map(|(a, b)| a * b).sum();
    let integral = rect_integral(rect, &g[1..], g[0]);
    (p.rss / (p.n - m - 3.0) * integral / (1.0 + q)).max(0.0)
}

/// `-sum p log p`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum()
}

/// Entropy of the particle-averaged class probabilities at `x`.
pub fn entropy_stat(trees: &[Tree], x: &[f64]) -> f64 {
    let mut avg: Vec<f64> = Vec::new();
    for t in trees {
        if let LeafPosterior::Multinomial(m) = &t.leaf_of(x).posterior {
            if avg.is_empty() {
                avg = vec![0.0; m.probs.len()];
            }
            avg.iter_mut().zip(&m.probs).for_each(|(a, p)| *a += p);
        }
    }
    let n = trees.len() as f64;
    avg.iter_mut().for_each(|a| *a /= n);
    entropy(&avg)
}

/// Hasher for pointer keys: one multiply, high bits folded down.
#[derive(Default)]
pub struct PtrHasher(u64);

impl Hasher for PtrHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 << 8 | u64::from(b)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        }
    }

    fn write_usize(&mut self, v: usize) {
        let h = (v as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.0 = h ^ (h >> 29);
    }
}

/// Net multiplicity change per leaf, kept in order of first appearance so
/// that summation order follows particle order rather than addresses.
#[derive(Default)]
struct Deltas<'a> {
    index: HashMap<usize, usize, BuildHasherDefault<PtrHasher>>,
    items: Vec<(&'a Arc<Node>, i64)>,
}

impl<'a> Deltas<'a> {
    fn add(&mut self, n: &'a Arc<Node>, k: i64) {
        let key = Arc::as_ptr(n) as usize;
        match self.index.get(&key) {
            Some(&i) => self.items[i].1 += k,
            None => {
                self.index.insert(key, self.items.len());
                self.items.push((n, k));
            }
        }
    }
}

/// Particle sums of the AD statistic for every pool slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdCache {
    kind: AdKind,
    stride: usize,
    sum: Vec<f64>,
    /// Number of particles contributing a finite value.
    count: Vec<i64>,
}

impl AdCache {
    pub fn new(kind: AdKind, model: &LeafModel) -> Self {
        let stride = match kind {
            AdKind::Entropy => model.classes,
            _ => 1,
        };
        Self {
            kind,
            stride,
            sum: Vec::new(),
            count: Vec::new(),
        }
    }

    pub fn kind(&self) -> AdKind {
        self.kind
    }

    fn ensure(&mut self, id: PointId) {
        let s = id as usize + 1;
        if self.count.len() < s {
            self.count.resize(s, 0);
            self.sum.resize(s * self.stride, 0.0);
        }
    }

    /// Forget a slot that has left the pool.
    pub fn release(&mut self, id: PointId) {
        let s = id as usize;
        if s < self.count.len() {
            self.count[s] = 0;
            self.sum[s * self.stride..(s + 1) * self.stride].fill(0.0);
        }
    }

    fn add_leaf(&mut self, leaf: &LeafNode, k: i64) {
        if k == 0 {
            return;
        }
        let kf = k as f64;
        match (self.kind, &leaf.ad, &leaf.posterior) {
            (AdKind::Alc, AdStat::Alc(vals), _) => {
                for (&id, &v) in leaf.active.iter().zip(vals) {
                    if v.is_finite() {
                        self.ensure(id);
                        let s = id as usize;
                        self.count[s] += k;
                        // an emptied slot must read exactly zero, not a cancellation residue
                        self.sum[s] = if self.count[s] == 0 { 0.0 } else { self.sum[s] + kf * v };
                    }
                }
            }
            (AdKind::Entropy, _, LeafPosterior::Multinomial(m)) => {
                let st = self.stride;
                for &id in &leaf.active {
                    self.ensure(id);
                    let s = id as usize;
                    self.count[s] += k;
                    let empty = self.count[s] == 0;
                    self.sum[s * st..(s + 1) * st]
                        .iter_mut()
                        .zip(&m.probs)
                        .for_each(|(a, p)| *a = if empty { 0.0 } else { *a + kf * p });
                }
            }
            _ => {}
        }
    }

    fn apply(&mut self, deltas: Deltas) {
        for (node, k) in deltas.items {
            if let Some(leaf) = node.as_leaf() {
                self.add_leaf(leaf, k);
            }
        }
    }

    /// Resampling event: particle `i` of `parents` was copied `counts[i]`
    /// times.
    pub fn on_resample(&mut self, parents: &[Tree], counts: &[usize]) {
        if self.kind == AdKind::None {
            return;
        }
        let mut deltas = Deltas::default();
        for (t, &c) in parents.iter().zip(counts) {
            let k = c as i64 - 1;
            if k != 0 {
                t.for_each_leaf(|n, _| deltas.add(n, k));
            }
        }
        self.apply(deltas);
    }

    /// Structural change inside one or more particles.
    pub fn on_swaps<'a>(&mut self, swaps: impl IntoIterator<Item = &'a Swap>) {
        if self.kind == AdKind::None {
            return;
        }
        let mut deltas = Deltas::default();
        for s in swaps {
            for n in &s.removed {
                deltas.add(n, -1);
            }
            for n in &s.added {
                deltas.add(n, 1);
            }
        }
        self.apply(deltas);
    }

    /// Rebuild from scratch over the given particles.
    pub fn recompute(&mut self, trees: &[Tree]) {
        self.sum.iter_mut().for_each(|v| *v = 0.0);
        self.count.iter_mut().for_each(|v| *v = 0);
        if self.kind == AdKind::None {
            return;
        }
        let mut deltas = Deltas::default();
        for t in trees {
            t.for_each_leaf(|n, _| deltas.add(n, 1));
        }
        self.apply(deltas);
    }

    /// Particle-averaged statistic for one pool point; `+inf` when no
    /// particle gives it a finite value.
    pub fn stat(&self, id: PointId) -> f64 {
        let s = id as usize;
        let c = self.count.get(s).copied().unwrap_or(0);
        if c <= 0 {
            return f64::INFINITY;
        }
        let cf = c as f64;
        match self.kind {
            AdKind::Alc => self.sum[s] / cf,
            AdKind::Entropy => {
                let st = self.stride;
                let p: Vec<f64> = self.sum[s * st..(s + 1) * st].iter().map(|v| v / cf).collect();
                entropy(&p)
            }
            AdKind::None => f64::INFINITY,
        }
    }

    /// Largest relative difference from a from-scratch rebuild over `pool`.
    pub fn max_rel_error(&self, trees: &[Tree], pool: &Pool) -> f64 {
        let mut fresh = self.clone();
        fresh.recompute(trees);
        let mut worst: f64 = 0.0;
        for id in pool.ids() {
            let s = id as usize;
            let c0 = self.count.get(s).copied().unwrap_or(0);
            let c1 = fresh.count.get(s).copied().unwrap_or(0);
            if c0 != c1 {
                return f64::INFINITY;
            }
            let st = self.stride;
            for j in 0..st {
                let a = self.sum.get(s * st + j).copied().unwrap_or(0.0);
                let b = fresh.sum.get(s * st + j).copied().unwrap_or(0.0);
                let scale = a.abs().max(b.abs());
                if scale > 0.0 {
                    worst = worst.max((a - b).abs() / scale);
                }
            }
        }
        worst
    }
}

/// Choose the point to retire. `alc`/`entropy` take the argmin of the
/// cached statistic; ties go to the oldest point.
pub fn select_retiree<R: Rng + ?Sized>(
    pool: &Pool,
    policy: &DiscardPolicy,
    cache: &AdCache,
    rng: &mut R,
) -> Result<PointId> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    match policy.kind {
        PolicyKind::Historical => Ok(pool.oldest().expect("non-empty pool")),
        PolicyKind::Random => {
            let k = rng.random_range(0..pool.len());
            Ok(pool.ids().nth(k).expect("index below pool size"))
        }
        PolicyKind::Alc | PolicyKind::Entropy => {
            let mut best = None;
            let mut best_v = f64::INFINITY;
            for id in pool.ids() {
                let v = cache.stat(id);
                if best.is_none() || v < best_v {
                    best = Some(id);
                    best_v = v;
                }
            }
            Ok(best.expect("non-empty pool"))
        }
    }
}

/// Index of the smallest value, ties to the earliest.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v < b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

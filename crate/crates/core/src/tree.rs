//! Recursive binary partition with per-leaf active data and retired priors.
//!
//! Trees are persistent: nodes sit behind `Arc`, and every change copies only
//! the path from the root to the modified leaf, so resampled particles share
//! everything they have in common.

use std::collections::HashMap;
use std::hash::BuildHasherDefault;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discard::{self, AdKind, AdStat, PtrHasher};
use crate::error::{Error, Result};
use crate::leaf::{posterior_from_stats, split_prior, LeafModel, LeafPosterior, LeafPrior, Vague};
use crate::pool::{PointId, Pool};

/// Split `x` right iff `x[dim] >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub dim: usize,
    pub threshold: f64,
}

impl SplitRule {
    #[inline]
    pub fn goes_right(&self, x: &[f64]) -> bool {
        x[self.dim] >= self.threshold
    }
}

/// Axis-aligned box `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn unbounded(dim: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    /// Degenerate box around one point.
    pub fn around(x: &[f64]) -> Self {
        Self {
            lo: x.to_vec(),
            hi: x.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn expand(&mut self, x: &[f64]) {
        for (i, &v) in x.iter().enumerate() {
            self.lo[i] = self.lo[i].min(v);
            self.hi[i] = self.hi[i].max(v);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lo[i] && v <= self.hi[i])
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a).max(0.0))
            .product()
    }

    /// Rule bounds clamped to the data bounding box.
    fn clamp_to(lo: &[f64], hi: &[f64], bbox: &Rect) -> Self {
        Self {
            lo: lo.iter().zip(&bbox.lo).map(|(a, b)| a.max(*b)).collect(),
            hi: hi.iter().zip(&bbox.hi).map(|(a, b)| a.min(*b)).collect(),
        }
    }
}

/// Tree prior `p_split(D) = alpha (1 + D)^-beta` plus the minimum leaf size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePriorConfig {
    pub alpha: f64,
    pub beta: f64,
    pub min_leaf: usize,
}

impl Default for TreePriorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            beta: 2.0,
            min_leaf: 5,
        }
    }
}

impl TreePriorConfig {
    /// Default prior with the minimum leaf size suited to the leaf model:
    /// linear leaves need `2d + 3` points, the others 5.
    pub fn for_model(model: &LeafModel) -> Self {
        let min_leaf = match model.kind {
            crate::leaf::LeafKind::Linear => (2 * model.dim + 3).max(5),
            _ => 5,
        };
        Self {
            min_leaf,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tree prior alpha {} must lie in (0, 1)",
                self.alpha
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tree prior beta {} must be positive",
                self.beta
            )));
        }
        if self.min_leaf < 1 {
            return Err(Error::InvalidConfig("min_leaf must be at least 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn p_split(&self, depth: usize) -> f64 {
        self.alpha * (1.0 + depth as f64).powf(-self.beta)
    }
}

/// Everything a tree operation reads but does not own.
#[derive(Clone, Copy)]
pub struct Ctx<'a> {
    pub model: &'a LeafModel,
    pub prior: &'a TreePriorConfig,
    pub pool: &'a Pool,
    pub bbox: &'a Rect,
    pub vague: Vague,
    pub ad: AdKind,
}

#[derive(Debug, Clone)]
pub struct LeafNode {
    /// Active pool points in this leaf.
    pub active: Vec<PointId>,
    /// Sufficient statistics of the active points.
    pub stats: LeafPrior,
    /// Retired information.
    pub prior: LeafPrior,
    pub posterior: LeafPosterior,
    /// Leaf rectangle at the time the leaf was built.
    pub rect: Rect,
    pub ad: AdStat,
}

impl LeafNode {
    fn build(
        ctx: &Ctx,
        active: Vec<PointId>,
        stats: LeafPrior,
        prior: LeafPrior,
        posterior: LeafPosterior,
        rect: Rect,
    ) -> Self {
        let mut leaf = Self {
            active,
            stats,
            prior,
            posterior,
            rect,
            ad: AdStat::None,
        };
        leaf.ad = discard::leaf_ad(ctx, &leaf);
        leaf
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Prior + active statistics.
    pub fn combined(&self) -> LeafPrior {
        let mut c = self.stats.clone();
        c.add_assign(&self.prior);
        c
    }
}

#[derive(Debug, Clone)]
pub enum Node {
    Leaf(LeafNode),
    Split {
        rule: SplitRule,
        left: Arc<Node>,
        right: Arc<Node>,
    },
}

impl Node {
    pub fn as_leaf(&self) -> Option<&LeafNode> {
        match self {
            Node::Leaf(l) => Some(l),
            Node::Split { .. } => None,
        }
    }
}

/// One of the three local moves. `Grow` carries its sampled rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Move {
    Stay,
    Prune,
    Grow(SplitRule),
}

/// Available moves at `eta(x)` with their proposal probabilities `p_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveSet {
    pub moves: Vec<(Move, f64)>,
}

impl MoveSet {
    pub fn prob(&self, kind: fn(&Move) -> bool) -> f64 {
        self.moves.iter().filter(|(m, _)| kind(m)).map(|(_, p)| p).sum()
    }
}

/// Replacement leaves already built during one retirement, keyed by the
/// address of the leaf they replace.
pub type RetireMemo = HashMap<usize, Arc<Node>, BuildHasherDefault<PtrHasher>>;

/// What a committed update replaced, for AD cache bookkeeping.
#[derive(Debug, Default)]
pub struct Swap {
    pub removed: Vec<Arc<Node>>,
    pub added: Vec<Arc<Node>>,
}

#[derive(Debug, Clone)]
pub struct Tree {
    root: Arc<Node>,
}

/// Path from the root to a leaf.
struct Focus<'a> {
    /// Internal nodes from the root down, with the branch taken.
    path: Vec<(&'a Node, bool)>,
    leaf_node: &'a Arc<Node>,
    leaf: &'a LeafNode,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> Focus<'a> {
    fn depth(&self) -> usize {
        self.path.len()
    }

    /// Sibling of the leaf when it is itself a leaf.
    fn sibling(&self) -> Option<(&'a Arc<Node>, &'a LeafNode)> {
        let (parent, went_right) = *self.path.last()?;
        let Node::Split { left, right, .. } = parent else {
            unreachable!()
        };
        let sib = if went_right { left } else { right };
        sib.as_leaf().map(|l| (sib, l))
    }

    /// Bounds of the parent region (the leaf's bounds with the last rule
    /// removed).
    fn parent_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::NEG_INFINITY; self.lo.len()];
        let mut hi = vec![f64::INFINITY; self.lo.len()];
        for (node, right) in &self.path[..self.path.len() - 1] {
            let Node::Split { rule, .. } = node else {
                unreachable!()
            };
            if *right {
                lo[rule.dim] = lo[rule.dim].max(rule.threshold);
            } else {
                hi[rule.dim] = hi[rule.dim].min(rule.threshold);
            }
        }
        (lo, hi)
    }
}

/// Candidate replacement for the focused leaf after adding the new point.
struct Draft {
    active: Vec<PointId>,
    stats: LeafPrior,
    prior: LeafPrior,
    posterior: LeafPosterior,
}

impl Draft {
    fn log_marginal(&self, vague: &Vague) -> f64 {
        self.posterior.log_marginal(vague)
    }

    fn into_leaf(self, ctx: &Ctx, rect: Rect) -> LeafNode {
        LeafNode::build(ctx, self.active, self.stats, self.prior, self.posterior, rect)
    }
}

fn make_draft(ctx: &Ctx, active: Vec<PointId>, stats: LeafPrior, prior: LeafPrior) -> Draft {
    let mut combined = stats.clone();
    combined.add_assign(&prior);
    let posterior = posterior_from_stats(ctx.model, &combined);
    Draft {
        active,
        stats,
        prior,
        posterior,
    }
}

fn stats_of_ids(ctx: &Ctx, ids: &[PointId], row: &mut Vec<f64>) -> LeafPrior {
    let mut s = ctx.model.empty_prior();
    for &id in ids {
        s.push(ctx.model, ctx.pool.x(id), ctx.pool.y(id), row);
    }
    s
}

/// Rebuild the path above a replaced node.
fn rebuild(path: &[(&Node, bool)], mut child: Arc<Node>) -> Arc<Node> {
    for (node, went_right) in path.iter().rev() {
        let Node::Split { rule, left, right } = node else {
            unreachable!()
        };
        child = if *went_right {
            Arc::new(Node::Split {
                rule: *rule,
                left: left.clone(),
                right: child,
            })
        } else {
            Arc::new(Node::Split {
                rule: *rule,
                left: child,
                right: right.clone(),
            })
        };
    }
    child
}

/// Fully evaluated candidate set for one update.
struct Proposal {
    stay: Draft,
    prune: Option<Draft>,
    grow: Option<(SplitRule, Draft, Draft)>,
    moves: MoveSet,
    log_weights: Vec<f64>,
}

impl Tree {
    /// Single-leaf tree over `ids` with an empty prior.
    pub fn new(ctx: &Ctx, ids: Vec<PointId>) -> Self {
        let mut row = Vec::new();
        let stats = stats_of_ids(ctx, &ids, &mut row);
        let draft = make_draft(ctx, ids, stats, ctx.model.empty_prior());
        let rect = ctx.bbox.clone();
        Self {
            root: Arc::new(Node::Leaf(draft.into_leaf(ctx, rect))),
        }
    }

    pub fn from_root(root: Arc<Node>) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Arc<Node> {
        &self.root
    }

    pub fn ptr_eq(&self, other: &Tree) -> bool {
        Arc::ptr_eq(&self.root, &other.root)
    }

    fn focus<'a>(&'a self, x: &[f64]) -> Focus<'a> {
        let d = x.len();
        let mut lo = vec![f64::NEG_INFINITY; d];
        let mut hi = vec![f64::INFINITY; d];
        let mut path = Vec::new();
        let mut node = &self.root;
        loop {
            match node.as_ref() {
                Node::Leaf(leaf) => {
                    return Focus {
                        path,
                        leaf_node: node,
                        leaf,
                        lo,
                        hi,
                    }
                }
                Node::Split { rule, left, right } => {
                    let r = rule.goes_right(x);
                    if r {
                        lo[rule.dim] = lo[rule.dim].max(rule.threshold);
                    } else {
                        hi[rule.dim] = hi[rule.dim].min(rule.threshold);
                    }
                    path.push((node.as_ref(), r));
                    node = if r { right } else { left };
                }
            }
        }
    }

    /// The unique leaf containing `x`.
    pub fn leaf_of(&self, x: &[f64]) -> &LeafNode {
        let mut node = &self.root;
        loop {
            match node.as_ref() {
                Node::Leaf(l) => return l,
                Node::Split { rule, left, right } => {
                    node = if rule.goes_right(x) { right } else { left };
                }
            }
        }
    }

    /// Like [`Tree::leaf_of`] but returns the shared node and its depth.
    pub fn leaf_node_of(&self, x: &[f64]) -> (&Arc<Node>, usize) {
        let mut node = &self.root;
        let mut depth = 0;
        loop {
            match node.as_ref() {
                Node::Leaf(_) => return (node, depth),
                Node::Split { rule, left, right } => {
                    node = if rule.goes_right(x) { right } else { left };
                    depth += 1;
                }
            }
        }
    }

    /// Visit every leaf with its depth.
    pub fn for_each_leaf<'a>(&'a self, mut f: impl FnMut(&'a Arc<Node>, usize)) {
        fn walk<'a>(n: &'a Arc<Node>, depth: usize, f: &mut impl FnMut(&'a Arc<Node>, usize)) {
            match n.as_ref() {
                Node::Leaf(_) => f(n, depth),
                Node::Split { left, right, .. } => {
                    walk(left, depth + 1, f);
                    walk(right, depth + 1, f);
                }
            }
        }
        walk(&self.root, 0, &mut f);
    }

    pub fn leaves(&self) -> Vec<(&LeafNode, usize)> {
        let mut out = Vec::new();
        self.for_each_leaf(|n, d| out.push((n.as_leaf().unwrap(), d)));
        out
    }

    pub fn leaf_count(&self) -> usize {
        let mut n = 0;
        self.for_each_leaf(|_, _| n += 1);
        n
    }

    pub fn node_count(&self) -> usize {
        2 * self.leaf_count() - 1
    }

    /// Height with the root-only tree counted as 1.
    pub fn height(&self) -> usize {
        let mut h = 0;
        self.for_each_leaf(|_, d| h = h.max(d + 1));
        h
    }

    /// Unnormalised `log pi(T)`.
    pub fn log_tree_prior(&self, cfg: &TreePriorConfig) -> f64 {
        fn walk(n: &Node, depth: usize, cfg: &TreePriorConfig) -> f64 {
            let ps = cfg.p_split(depth);
            match n {
                Node::Leaf(_) => (1.0 - ps).ln(),
                Node::Split { left, right, .. } => {
                    ps.ln() + walk(left, depth + 1, cfg) + walk(right, depth + 1, cfg)
                }
            }
        }
        walk(&self.root, 0, cfg)
    }

    /// `sum_leaves log p(y^eta | x^eta)` under the current priors.
    pub fn log_marginal_likelihood(&self, vague: &Vague) -> f64 {
        self.leaves()
            .iter()
            .map(|(l, _)| l.posterior.log_marginal(vague))
            .sum()
    }

    /// Total retired strength over leaves.
    pub fn retired_mass(&self) -> f64 {
        self.leaves().iter().map(|(l, _)| l.prior.strength()).sum()
    }

    pub fn active_count(&self) -> usize {
        self.leaves().iter().map(|(l, _)| l.len()).sum()
    }

    /// Add pool point `id` to the leaf containing it.
    pub fn insert(&self, ctx: &Ctx, id: PointId) -> (Tree, Swap) {
        let x = ctx.pool.x(id);
        let f = self.focus(x);
        let stay = self.stay_draft(ctx, &f, id);
        let rect = Rect::clamp_to(&f.lo, &f.hi, ctx.bbox);
        let new_leaf = Arc::new(Node::Leaf(stay.into_leaf(ctx, rect)));
        let swap = Swap {
            removed: vec![f.leaf_node.clone()],
            added: vec![new_leaf.clone()],
        };
        (Tree::from_root(rebuild(&f.path, new_leaf)), swap)
    }

    fn stay_draft(&self, ctx: &Ctx, f: &Focus, id: PointId) -> Draft {
        let mut active = Vec::with_capacity(f.leaf.active.len() + 1);
        active.extend_from_slice(&f.leaf.active);
        active.push(id);
        let mut stats = f.leaf.stats.clone();
        let mut row = Vec::new();
        stats.push(ctx.model, ctx.pool.x(id), ctx.pool.y(id), &mut row);
        make_draft(ctx, active, stats, f.leaf.prior.clone())
    }

    fn leaf_as_draft(&self, f: &Focus) -> Draft {
        Draft {
            active: f.leaf.active.clone(),
            stats: f.leaf.stats.clone(),
            prior: f.leaf.prior.clone(),
            posterior: f.leaf.posterior.clone(),
        }
    }

    /// Candidate moves at `eta(x)`; the leaf is assumed to already hold the
    /// new point. Grow draws its dimension and threshold from `rng`.
    pub fn local_moves<R: Rng + ?Sized>(&self, ctx: &Ctx, x: &[f64], rng: &mut R) -> MoveSet {
        let f = self.focus(x);
        let stay = self.leaf_as_draft(&f);
        let rule = self.sample_rule(ctx, &f, rng);
        self.propose(ctx, &f, stay, rule).moves
    }

    fn sample_rule<R: Rng + ?Sized>(
        &self,
        ctx: &Ctx,
        f: &Focus,
        rng: &mut R,
    ) -> Option<SplitRule> {
        let d = ctx.model.dim;
        if d == 0 {
            return None;
        }
        let dim = rng.random_range(0..d);
        let u: f64 = rng.random();
        let a = f.lo[dim].max(ctx.bbox.lo[dim]);
        let b = f.hi[dim].min(ctx.bbox.hi[dim]);
        if !(b > a) {
            return None;
        }
        Some(SplitRule {
            dim,
            threshold: a + u * (b - a),
        })
    }

    fn grow_drafts(
        &self,
        ctx: &Ctx,
        stay: &Draft,
        rule: SplitRule,
    ) -> Option<(Draft, Draft)> {
        let (right, left): (Vec<PointId>, Vec<PointId>) = stay
            .active
            .iter()
            .partition(|&&id| rule.goes_right(ctx.pool.x(id)));
        let min = ctx.prior.min_leaf;
        if left.len() < min || right.len() < min {
            return None;
        }
        let alpha = left.len() as f64 / stay.active.len() as f64;
        let (lp, rp) = split_prior(&stay.prior, alpha).ok()?;
        let mut row = Vec::new();
        let ls = stats_of_ids(ctx, &left, &mut row);
        let rs = stats_of_ids(ctx, &right, &mut row);
        Some((make_draft(ctx, left, ls, lp), make_draft(ctx, right, rs, rp)))
    }

    fn prune_draft(&self, ctx: &Ctx, f: &Focus, stay: &Draft) -> Option<Draft> {
        let (_, sib) = f.sibling()?;
        let mut active = Vec::with_capacity(stay.active.len() + sib.active.len());
        active.extend_from_slice(&stay.active);
        active.extend_from_slice(&sib.active);
        let mut stats = stay.stats.clone();
        stats.add_assign(&sib.stats);
        let mut prior = stay.prior.clone();
        prior.add_assign(&sib.prior);
        Some(make_draft(ctx, active, stats, prior))
    }

    fn propose(&self, ctx: &Ctx, f: &Focus, stay: Draft, rule: Option<SplitRule>) -> Proposal {
        let prune = self.prune_draft(ctx, f, &stay);
        let grow = rule.and_then(|rule| self.grow_drafts(ctx, &stay, rule).map(|(l, r)| (rule, l, r)));

        let third: f64 = 1.0 / 3.0;
        let p_prune = if prune.is_some() { third } else { 0.0 };
        let p_grow = if grow.is_some() { third } else { 0.0 };
        let p_stay = 1.0 - p_prune - p_grow;

        let cfg = ctx.prior;
        let v = &ctx.vague;
        let depth = f.depth();
        let ps = |d: usize| cfg.p_split(d);
        // terms shared by stay and grow but absent after a prune
        let common = match (&prune, f.sibling()) {
            (Some(_), Some((_, sib))) => {
                (1.0 - ps(depth)).ln() + sib.posterior.log_marginal(v) + ps(depth - 1).ln()
            }
            _ => 0.0,
        };

        let mut moves = vec![(Move::Stay, p_stay)];
        let mut log_weights =
            vec![p_stay.ln() + (1.0 - ps(depth)).ln() + stay.log_marginal(v) + common];
        if let Some(pd) = &prune {
            moves.push((Move::Prune, p_prune));
            log_weights.push(p_prune.ln() + (1.0 - ps(depth - 1)).ln() + pd.log_marginal(v));
        }
        if let Some((rule, l, r)) = &grow {
            moves.push((Move::Grow(*rule), p_grow));
            log_weights.push(
                p_grow.ln()
                    + ps(depth).ln()
                    + 2.0 * (1.0 - ps(depth + 1)).ln()
                    + l.log_marginal(v)
                    + r.log_marginal(v)
                    + common,
            );
        }
        Proposal {
            stay,
            prune,
            grow,
            moves: MoveSet { moves },
            log_weights,
        }
    }

    /// Posterior weights (normalised) of the moves in `set`, evaluated on
    /// this tree whose leaf at `x` already holds the new point.
    pub fn move_posterior(&self, ctx: &Ctx, x: &[f64], set: &MoveSet) -> Result<Vec<f64>> {
        let f = self.focus(x);
        let stay = self.leaf_as_draft(&f);
        let grow_rule = set.moves.iter().find_map(|(m, _)| match m {
            Move::Grow(r) => Some(*r),
            _ => None,
        });
        let prop = self.propose(ctx, &f, stay, grow_rule);
        if prop.moves.moves.len() != set.moves.len() {
            return Err(Error::InvalidMove("move set does not match this tree".into()));
        }
        Ok(normalise(&prop.log_weights))
    }

    /// Apply `mv` at the leaf containing `x` (which already holds the new
    /// point).
    pub fn apply_move(&self, ctx: &Ctx, x: &[f64], mv: &Move) -> Result<(Tree, Swap)> {
        let f = self.focus(x);
        let stay = self.leaf_as_draft(&f);
        match mv {
            Move::Stay => Ok((self.clone(), Swap::default())),
            Move::Prune => {
                let d = self
                    .prune_draft(ctx, &f, &stay)
                    .ok_or_else(|| Error::InvalidMove("no prunable parent".into()))?;
                Ok(self.commit_prune(ctx, &f, d))
            }
            Move::Grow(rule) => {
                let a = f.lo[rule.dim].max(ctx.bbox.lo[rule.dim]);
                let b = f.hi[rule.dim].min(ctx.bbox.hi[rule.dim]);
                if !(rule.threshold >= a && rule.threshold <= b) {
                    return Err(Error::InvalidMove("threshold outside the leaf".into()));
                }
                let (l, r) = self
                    .grow_drafts(ctx, &stay, *rule)
                    .ok_or_else(|| Error::InvalidMove("grow violates min_leaf".into()))?;
                Ok(self.commit_grow(ctx, &f, *rule, l, r))
            }
        }
    }

    fn commit_stay(&self, ctx: &Ctx, f: &Focus, stay: Draft) -> (Tree, Swap) {
        let rect = Rect::clamp_to(&f.lo, &f.hi, ctx.bbox);
        let leaf = Arc::new(Node::Leaf(stay.into_leaf(ctx, rect)));
        let swap = Swap {
            removed: vec![f.leaf_node.clone()],
            added: vec![leaf.clone()],
        };
        (Tree::from_root(rebuild(&f.path, leaf)), swap)
    }

    fn commit_prune(&self, ctx: &Ctx, f: &Focus, d: Draft) -> (Tree, Swap) {
        let (sib_node, _) = f.sibling().expect("prune needs a leaf sibling");
        let (lo, hi) = f.parent_bounds();
        let rect = Rect::clamp_to(&lo, &hi, ctx.bbox);
        let leaf = Arc::new(Node::Leaf(d.into_leaf(ctx, rect)));
        let swap = Swap {
            removed: vec![f.leaf_node.clone(), sib_node.clone()],
            added: vec![leaf.clone()],
        };
        let path = &f.path[..f.path.len() - 1];
        (Tree::from_root(rebuild(path, leaf)), swap)
    }

    fn commit_grow(
        &self,
        ctx: &Ctx,
        f: &Focus,
        rule: SplitRule,
        l: Draft,
        r: Draft,
    ) -> (Tree, Swap) {
        let mut lhi = f.hi.clone();
        lhi[rule.dim] = rule.threshold;
        let mut rlo = f.lo.clone();
        rlo[rule.dim] = rule.threshold;
        let left = Arc::new(Node::Leaf(
            l.into_leaf(ctx, Rect::clamp_to(&f.lo, &lhi, ctx.bbox)),
        ));
        let right = Arc::new(Node::Leaf(
            r.into_leaf(ctx, Rect::clamp_to(&rlo, &f.hi, ctx.bbox)),
        ));
        let swap = Swap {
            removed: vec![f.leaf_node.clone()],
            added: vec![left.clone(), right.clone()],
        };
        let split = Arc::new(Node::Split { rule, left, right });
        (Tree::from_root(rebuild(&f.path, split)), swap)
    }

    /// One propagation step for pool point `id`: add it to `eta(x)`, draw
    /// the local candidates, and sample among them with probability
    /// proportional to `p_m * pi(T) * p(y | T, x)` restricted to the
    /// affected subtree.
    pub fn propagate<R: Rng + ?Sized>(
        &self,
        ctx: &Ctx,
        id: PointId,
        rng: &mut R,
    ) -> (Tree, Swap, Move) {
        let x = ctx.pool.x(id);
        let f = self.focus(x);
        let stay = self.stay_draft(ctx, &f, id);
        let rule = self.sample_rule(ctx, &f, rng);
        let prop = self.propose(ctx, &f, stay, rule);
        let u: f64 = rng.random();
        let k = sample_index(&prop.log_weights, u);
        let mv = prop.moves.moves[k].0;
        let (tree, swap) = match mv {
            Move::Stay => self.commit_stay(ctx, &f, prop.stay),
            Move::Prune => self.commit_prune(ctx, &f, prop.prune.unwrap()),
            Move::Grow(rule) => {
                let (_, l, r) = prop.grow.unwrap();
                self.commit_grow(ctx, &f, rule, l, r)
            }
        };
        (tree, swap, mv)
    }

    /// Retire pool point `id`: fold it into its leaf's prior with forgetting
    /// `lambda` and drop it from the active set. `memo` maps already
    /// rewritten leaves (shared between particles) to their replacement.
    pub fn retire(
        &self,
        ctx: &Ctx,
        id: PointId,
        lambda: f64,
        memo: &mut RetireMemo,
    ) -> Result<(Tree, Swap)> {
        let x = ctx.pool.x(id);
        let f = self.focus(x);
        let key = Arc::as_ptr(f.leaf_node) as usize;
        let new_leaf = match memo.get(&key) {
            Some(n) => n.clone(),
            None => {
                let leaf = f.leaf;
                let pos = leaf
                    .active
                    .iter()
                    .position(|&a| a == id)
                    .ok_or(Error::UnknownPoint(id))?;
                let mut active = leaf.active.clone();
                active.remove(pos);
                let mut row = Vec::new();
                let stats = stats_of_ids(ctx, &active, &mut row);
                let mut prior = leaf.prior.clone();
                prior.push_decayed(ctx.model, x, ctx.pool.y(id), lambda, &mut row);
                let d = make_draft(ctx, active, stats, prior);
                let node = if lambda == 1.0 {
                    // predictive unchanged: keep the cached AD statistics
                    let ad = leaf.ad.without(pos);
                    LeafNode {
                        active: d.active,
                        stats: d.stats,
                        prior: d.prior,
                        posterior: d.posterior,
                        rect: leaf.rect.clone(),
                        ad,
                    }
                } else {
                    d.into_leaf(ctx, leaf.rect.clone())
                };
                let n = Arc::new(Node::Leaf(node));
                memo.insert(key, n.clone());
                n
            }
        };
        let swap = Swap {
            removed: vec![f.leaf_node.clone()],
            added: vec![new_leaf.clone()],
        };
        Ok((Tree::from_root(rebuild(&f.path, new_leaf)), swap))
    }

    /// Check the partition invariants against the pool. Returns a
    /// description of the first violation.
    pub fn validate(&self, ctx: &Ctx) -> std::result::Result<(), String> {
        let mut owner: HashMap<PointId, usize> = HashMap::new();
        let leaves = self.leaves();
        for (k, (leaf, _)) in leaves.iter().enumerate() {
            for &id in &leaf.active {
                if !ctx.pool.contains(id) {
                    return Err(format!("leaf {k} references dead point {id}"));
                }
                if owner.insert(id, k).is_some() {
                    return Err(format!("point {id} is in two leaves"));
                }
            }
        }
        for id in ctx.pool.ids() {
            let Some(&k) = owner.get(&id) else {
                return Err(format!("pool point {id} is in no leaf"));
            };
            let by_rule = self.leaf_of(ctx.pool.x(id)) as *const LeafNode;
            if by_rule != leaves[k].0 as *const LeafNode {
                return Err(format!("point {id} is stored outside its leaf"));
            }
        }
        if owner.len() != ctx.pool.len() {
            return Err("leaves hold points missing from the pool".into());
        }
        Ok(())
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        fn walk(n: &Node, depth: usize) -> TreeSnapshot {
            match n {
                Node::Leaf(l) => TreeSnapshot::Leaf {
                    depth,
                    active: l.active.len(),
                    retired: l.prior.strength(),
                    proper: l.posterior.is_proper(),
                },
                Node::Split { rule, left, right } => TreeSnapshot::Split {
                    depth,
                    dim: rule.dim,
                    threshold: rule.threshold,
                    left: Box::new(walk(left, depth + 1)),
                    right: Box::new(walk(right, depth + 1)),
                },
            }
        }
        walk(&self.root, 0)
    }
}

/// Human-readable structure dump; not a stable format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeSnapshot {
    Leaf {
        depth: usize,
        active: usize,
        retired: f64,
        proper: bool,
    },
    Split {
        depth: usize,
        dim: usize,
        threshold: f64,
        left: Box<TreeSnapshot>,
        right: Box<TreeSnapshot>,
    },
}

pub(crate) fn normalise(log_w: &[f64]) -> Vec<f64> {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn sample_index(log_w: &[f64], u: f64) -> usize {
    let w = normalise(log_w);
    let mut acc = 0.0;
    for (i, p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    w.len() - 1
}

//! Lossless save/restore of a particle cloud as versioned JSON.
//!
//! Nodes shared between particles are written once into a node table.
//! Leaf posteriors are rebuilt from the stored statistics, which reproduces
//! them bit for bit.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discard::{AdCache, AdStat};
use crate::error::{Error, Result};
use crate::leaf::{posterior_from_stats, LeafPrior};
use crate::pool::{PointId, Pool};
use crate::smc::{CloudConfig, ParticleCloud};
use crate::tree::{LeafNode, Node, Rect, SplitRule, Tree};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
enum NodeRecord {
    Leaf {
        active: Vec<PointId>,
        stats: LeafPrior,
        prior: LeafPrior,
        rect: Rect,
        alc: Option<Vec<f64>>,
    },
    Split {
        rule: SplitRule,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: CloudConfig,
    pool: Pool,
    bbox: Rect,
    rng: ChaCha8Rng,
    t: u64,
    cache: AdCache,
    last_weights: Vec<f64>,
    degenerate_steps: u64,
    retired: u64,
    nodes: Vec<NodeRecord>,
    roots: Vec<usize>,
}

fn flatten(n: &Arc<Node>, table: &mut Vec<NodeRecord>, seen: &mut HashMap<usize, usize>) -> usize {
    let key = Arc::as_ptr(n) as usize;
    if let Some(&i) = seen.get(&key) {
        return i;
    }
    let rec = match n.as_ref() {
        Node::Leaf(l) => NodeRecord::Leaf {
            active: l.active.clone(),
            stats: l.stats.clone(),
            prior: l.prior.clone(),
            rect: l.rect.clone(),
            alc: match &l.ad {
                AdStat::Alc(v) => Some(v.clone()),
                AdStat::None => None,
            },
        },
        Node::Split { rule, left, right } => {
            let l = flatten(left, table, seen);
            let r = flatten(right, table, seen);
            NodeRecord::Split {
                rule: *rule,
                left: l,
                right: r,
            }
        }
    };
    table.push(rec);
    let i = table.len() - 1;
    seen.insert(key, i);
    i
}

/// Write `cloud` to `w`.
pub fn save<W: Write>(cloud: &ParticleCloud, w: W) -> Result<()> {
    let mut nodes = Vec::new();
    let mut seen = HashMap::new();
    let roots = cloud
        .particles
        .iter()
        .map(|t| flatten(t.root(), &mut nodes, &mut seen))
        .collect();
    let cp = Checkpoint {
        version: FORMAT_VERSION,
        config: cloud.config.clone(),
        pool: cloud.pool.clone(),
        bbox: cloud.bbox.clone(),
        rng: cloud.rng.clone(),
        t: cloud.t,
        cache: cloud.cache.clone(),
        last_weights: cloud.last_weights.clone(),
        degenerate_steps: cloud.degenerate_steps,
        retired: cloud.retired,
        nodes,
        roots,
    };
    serde_json::to_writer(w, &cp).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Read a cloud written by [`save`].
pub fn load<R: Read>(r: R) -> Result<ParticleCloud> {
    let cp: Checkpoint =
        serde_json::from_reader(r).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if cp.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
            cp.version
        )));
    }
    cp.config.validate()?;
    let model = &cp.config.model;
    let mut built: Vec<Arc<Node>> = Vec::with_capacity(cp.nodes.len());
    for rec in cp.nodes {
        let node = match rec {
            NodeRecord::Leaf {
                active,
                stats,
                prior,
                rect,
                alc,
            } => {
                let mut combined = stats.clone();
                combined.add_assign(&prior);
                let posterior = posterior_from_stats(model, &combined);
                Node::Leaf(LeafNode {
                    active,
                    stats,
                    prior,
                    posterior,
                    rect,
                    ad: alc.map_or(AdStat::None, AdStat::Alc),
                })
            }
            NodeRecord::Split { rule, left, right } => {
                let get = |i: usize| {
                    built
                        .get(i)
                        .cloned()
                        .ok_or_else(|| Error::Checkpoint(format!("dangling node reference {i}")))
                };
                Node::Split {
                    rule,
                    left: get(left)?,
                    right: get(right)?,
                }
            }
        };
        built.push(Arc::new(node));
    }
    let particles = cp
        .roots
        .iter()
        .map(|&i| {
            built
                .get(i)
                .cloned()
                .map(Tree::from_root)
                .ok_or_else(|| Error::Checkpoint(format!("dangling root {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if particles.len() != cp.config.particles {
        return Err(Error::Checkpoint("particle count does not match config".into()));
    }
    Ok(ParticleCloud {
        config: cp.config,
        particles,
        pool: cp.pool,
        bbox: cp.bbox,
        rng: cp.rng,
        t: cp.t,
        cache: cp.cache,
        last_weights: cp.last_weights,
        degenerate_steps: cp.degenerate_steps,
        retired: cp.retired,
    })
}

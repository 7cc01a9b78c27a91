//! Shared active-data store. Points live in reusable slots; leaves refer to
//! them by slot index.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leaf::Vague;
use crate::obs::{Observation, Response};

pub type PointId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    arrival: Vec<u64>,
    live: Vec<bool>,
    free: Vec<PointId>,
    /// `(arrival, slot)` in arrival order; stale entries are skipped lazily.
    order: VecDeque<(u64, PointId)>,
    len: usize,
    sum_y: f64,
    sum_y2: f64,
}

impl Pool {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            xs: Vec::new(),
            ys: Vec::new(),
            arrival: Vec::new(),
            live: Vec::new(),
            free: Vec::new(),
            order: VecDeque::new(),
            len: 0,
            sum_y: 0.0,
            sum_y2: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, obs: &Observation) -> Result<PointId> {
        if obs.x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: obs.x.len(),
            });
        }
        let y = obs.y.as_f64();
        let id = match self.free.pop() {
            Some(id) => {
                let s = id as usize;
                self.xs[s * self.dim..(s + 1) * self.dim].copy_from_slice(&obs.x);
                self.ys[s] = y;
                self.arrival[s] = obs.t;
                self.live[s] = true;
                id
            }
            None => {
                self.xs.extend_from_slice(&obs.x);
                self.ys.push(y);
                self.arrival.push(obs.t);
                self.live.push(true);
                (self.ys.len() - 1) as PointId
            }
        };
        self.order.push_back((obs.t, id));
        self.len += 1;
        self.sum_y += y;
        self.sum_y2 += y * y;
        Ok(id)
    }

    pub fn remove(&mut self, id: PointId) -> Result<()> {
        if !self.contains(id) {
            return Err(Error::UnknownPoint(id));
        }
        let s = id as usize;
        self.live[s] = false;
        self.free.push(id);
        self.len -= 1;
        let y = self.ys[s];
        self.sum_y -= y;
        self.sum_y2 -= y * y;
        if self.len == 0 {
            self.sum_y = 0.0;
            self.sum_y2 = 0.0;
        }
        while let Some(&(t, front)) = self.order.front() {
            if self.is_current(t, front) {
                break;
            }
            self.order.pop_front();
        }
        // a long-lived oldest point blocks the front; compact so the queue stays O(len)
        if self.order.len() > 2 * self.len + 16 {
            let (live, arrival) = (&self.live, &self.arrival);
            self.order
                .retain(|&(t, id)| live[id as usize] && arrival[id as usize] == t);
        }
        Ok(())
    }

    fn is_current(&self, t: u64, id: PointId) -> bool {
        let s = id as usize;
        self.live[s] && self.arrival[s] == t
    }

    pub fn contains(&self, id: PointId) -> bool {
        self.live.get(id as usize).copied().unwrap_or(false)
    }

    pub fn x(&self, id: PointId) -> &[f64] {
        let s = id as usize;
        &self.xs[s * self.dim..(s + 1) * self.dim]
    }

    pub fn y(&self, id: PointId) -> f64 {
        self.ys[id as usize]
    }

    pub fn arrival(&self, id: PointId) -> u64 {
        self.arrival[id as usize]
    }

    pub fn observation(&self, id: PointId, classification: bool) -> Observation {
        let y = self.y(id);
        Observation {
            x: self.x(id).to_vec(),
            y: if classification {
                Response::Class(y as u32)
            } else {
                Response::Real(y)
            },
            t: self.arrival(id),
        }
    }

    /// Live ids in arrival order.
    pub fn ids(&self) -> impl Iterator<Item = PointId> + '_ {
        self.order
            .iter()
            .filter(|&&(t, id)| self.is_current(t, id))
            .map(|&(_, id)| id)
    }

    pub fn oldest(&self) -> Option<PointId> {
        self.ids().next()
    }

    /// Upper bound on slot indices, for slot-indexed side tables.
    pub fn capacity(&self) -> usize {
        self.ys.len()
    }

    /// Moment-matched normal over the pool responses; used as the vague
    /// predictive of improper regression leaves.
    pub fn vague(&self) -> Vague {
        if self.len < 2 {
            return Vague::default();
        }
        let n = self.len as f64;
        let mean = self.sum_y / n;
        let var = ((self.sum_y2 - n * mean * mean) / (n - 1.0)).max(1e-8);
        Vague { mean, var }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_are_reused_and_order_kept() {
        let mut p = Pool::new(1);
        let a = p.insert(&Observation::regression(vec![1.0], 1.0, 7)).unwrap();
        let b = p.insert(&Observation::regression(vec![2.0], 2.0, 8)).unwrap();
        let c = p.insert(&Observation::regression(vec![3.0], 3.0, 9)).unwrap();
        assert_eq!(p.oldest(), Some(a));
        p.remove(b).unwrap();
        assert_eq!(p.ids().collect::<Vec<_>>(), vec![a, c]);
        let d = p.insert(&Observation::regression(vec![4.0], 4.0, 10)).unwrap();
        assert_eq!(d, b);
        assert_eq!(p.ids().collect::<Vec<_>>(), vec![a, c, d]);
        p.remove(a).unwrap();
        assert_eq!(p.oldest(), Some(c));
        assert_eq!(p.len(), 2);
        assert!(p.remove(a).is_err());
        let v = p.vague();
        assert!((v.mean - 3.5).abs() < 1e-12);
    }

    #[test]
    fn queue_stays_bounded_behind_a_pinned_oldest_point() {
        let mut p = Pool::new(1);
        let pinned = p.insert(&Observation::regression(vec![0.0], 0.0, 0)).unwrap();
        for t in 1..10_000 {
            let id = p.insert(&Observation::regression(vec![1.0], 1.0, t)).unwrap();
            if p.len() > 5 {
                let victim = p.ids().nth(1).unwrap();
                assert_ne!(victim, id);
                p.remove(victim).unwrap();
            }
            assert!(p.order.len() <= 2 * p.len() + 17);
        }
        assert_eq!(p.oldest(), Some(pinned));
        assert_eq!(p.ids().count(), 5);
    }
}

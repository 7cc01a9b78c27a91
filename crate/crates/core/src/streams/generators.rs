use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::obs::Observation;

/// A generated observation plus its noiseless regression mean, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Observation,
    pub mean: Option<f64>,
}

pub trait Generator {
    fn dim(&self) -> usize;

    /// `Some(K)` for classification streams.
    fn classes(&self) -> Option<usize>;

    /// Draw one point from the generating process as it stands at time `t`.
    fn sample_at(&mut self, t: u64) -> Sample;

    /// `steps * per_step` samples; the `per_step` samples of step `s` all
    /// carry time `start + s`.
    fn generate(&mut self, start: u64, steps: usize, per_step: usize) -> Vec<Sample> {
        let mut out = Vec::with_capacity(steps * per_step);
        for s in 0..steps as u64 {
            for _ in 0..per_step {
                out.push(self.sample_at(start + s));
            }
        }
        out
    }
}

/// Time profile of the coefficient on the `sin(pi x1 x2)` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Drift {
    None,
    /// `a_t = 2 sin(2 pi k t / 1000) + 1`.
    Sinusoidal { k: f64 },
    /// `a_t = level` on `[start, end)`, 0 elsewhere.
    Step { level: f64, start: u64, end: u64 },
}

pub fn drift_amplitude(drift: &Drift, t: u64) -> f64 {
    match *drift {
        Drift::None => 1.0,
        Drift::Sinusoidal { k } => 2.0 * (2.0 * PI * k * t as f64 / 1000.0).sin() + 1.0,
        Drift::Step { level, start, end } => {
            if t >= start && t < end {
                level
            } else {
                0.0
            }
        }
    }
}

/// `10 a sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5`.
pub fn friedman_mean(x: &[f64], a: f64) -> f64 {
    10.0 * a * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

#[derive(Debug, Clone)]
pub struct Friedman {
    pub drift: Drift,
    pub noise_sd: f64,
    rng: ChaCha8Rng,
}

impl Friedman {
    pub fn new(seed: u64, drift: Drift) -> Self {
        Self {
            drift,
            noise_sd: 1.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Generator for Friedman {
    fn dim(&self) -> usize {
        5
    }

    fn classes(&self) -> Option<usize> {
        None
    }

    fn sample_at(&mut self, t: u64) -> Sample {
        let x: Vec<f64> = (0..5).map(|_| self.rng.random::<f64>()).collect();
        let mean = friedman_mean(&x, drift_amplitude(&self.drift, t));
        let e: f64 = self.rng.sample(StandardNormal);
        Sample {
            obs: Observation::regression(x, mean + self.noise_sd * e, t),
            mean: Some(mean),
        }
    }
}

/// `x + x^2`.
pub fn parabola_mean(x: f64) -> f64 {
    x + x * x
}

#[derive(Debug, Clone)]
pub struct Parabola {
    pub noise_sd: f64,
    rng: ChaCha8Rng,
}

impl Parabola {
    pub fn new(seed: u64) -> Self {
        Self {
            noise_sd: 1.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Generator for Parabola {
    fn dim(&self) -> usize {
        1
    }

    fn classes(&self) -> Option<usize> {
        None
    }

    fn sample_at(&mut self, t: u64) -> Sample {
        let x = self.rng.random_range(-3.0..2.0);
        let mean = parabola_mean(x);
        let e: f64 = self.rng.sample(StandardNormal);
        Sample {
            obs: Observation::regression(vec![x], mean + self.noise_sd * e, t),
            mean: Some(mean),
        }
    }
}

/// XOR label of a point in the unrotated frame: 0 when both coordinates
/// share a sign, 1 otherwise.
pub fn moving_xor_label(z: &[f64]) -> u32 {
    u32::from((z[0] >= 0.0) != (z[1] >= 0.0))
}

/// Four Gaussian blobs at `(+-1, +-1)` with XOR labels, rotated by
/// `rate * t`.
#[derive(Debug, Clone)]
pub struct MovingXor {
    pub blob_sd: f64,
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl MovingXor {
    pub fn new(seed: u64, rate: f64) -> Self {
        Self {
            blob_sd: 0.5,
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn default_rate() -> f64 {
        2.0 * PI / 5000.0
    }

    pub fn angle(&self, t: u64) -> f64 {
        self.rate * t as f64
    }

    /// Rotate `z` by `theta`.
    pub fn rotate(z: &[f64], theta: f64) -> Vec<f64> {
        let (s, c) = theta.sin_cos();
        vec![c * z[0] - s * z[1], s * z[0] + c * z[1]]
    }

    /// Bayes classifier under the known generator.
    pub fn bayes_label(&self, x: &[f64], t: u64) -> u32 {
        moving_xor_label(&Self::rotate(x, -self.angle(t)))
    }
}

impl Generator for MovingXor {
    fn dim(&self) -> usize {
        2
    }

    fn classes(&self) -> Option<usize> {
        Some(2)
    }

    fn sample_at(&mut self, t: u64) -> Sample {
        let cx = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
        let cy = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
        let label = moving_xor_label(&[cx, cy]);
        let n = Normal::new(0.0, self.blob_sd).expect("positive blob sd");
        let z = [cx + n.sample(&mut self.rng), cy + n.sample(&mut self.rng)];
        let x = Self::rotate(&z, self.angle(t));
        Sample {
            obs: Observation::classification(x, label, t),
            mean: None,
        }
    }
}

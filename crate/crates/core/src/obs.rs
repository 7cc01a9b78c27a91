use serde::{Deserialize, Serialize};

/// Response half of a labelled point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Response {
    Real(f64),
    Class(u32),
}

impl Response {
    /// Numeric encoding used by the pool: the value itself, or the class index.
    pub fn as_f64(self) -> f64 {
        match self {
            Response::Real(y) => y,
            Response::Class(c) => c as f64,
        }
    }

    pub fn class(self) -> Option<u32> {
        match self {
            Response::Class(c) => Some(c),
            Response::Real(_) => None,
        }
    }
}

/// One labelled datapoint `(x_t, y_t)` with its arrival index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: Response,
    pub t: u64,
}

impl Observation {
    pub fn regression(x: Vec<f64>, y: f64, t: u64) -> Self {
        Self {
            x,
            y: Response::Real(y),
            t,
        }
    }

    pub fn classification(x: Vec<f64>, class: u32, t: u64) -> Self {
        Self {
            x,
            y: Response::Class(class),
            t,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite()) && self.y.as_f64().is_finite()
    }
}

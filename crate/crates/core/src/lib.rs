//! Streaming nonparametric regression and classification with dynamic trees.
//!
//! A cloud of tree particles is updated by sequential Monte Carlo as labelled
//! points arrive. Memory stays constant: once the active pool holds `w`
//! points, one point per step is *retired*, i.e. folded into the conjugate
//! prior of the leaf that contains it in every particle, and dropped from the
//! pool. Which point retires is decided by a [`discard::DiscardPolicy`]
//! (oldest, random, ALC variance reduction, or predictive entropy), and a
//! forgetting factor `lambda` exponentially downweights retired history so
//! the model can follow drifting concepts.
//!
//! Module map:
//!
//! - [`leaf`]: conjugate leaf models (constant, linear, multinomial).
//! - [`tree`]: the recursive partition, its prior, and local moves.
//! - [`smc`]: the particle cloud, resampling and propagation.
//! - [`discard`]: retirement policies and the AD statistic cache.
//! - [`streams`]: generators, CSV ingestion, metrics and evaluation loops.

pub mod checkpoint;
pub mod discard;
pub mod error;
pub mod leaf;
mod linalg;
pub mod obs;
pub mod pool;
pub mod selfcheck;
pub mod smc;
pub mod streams;
pub mod tree;

pub use error::{Error, Result};
pub use obs::{Observation, Response};

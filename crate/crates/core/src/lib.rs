//! Task-oriented semantic transmission of point clouds: sampling and
//! grouping, a transformer semantic encoder, a learned channel codec over a
//! simulated noisy channel, two-stage training and evaluation.

pub mod channel;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

//! Bayesian estimation of the time-varying effective reproduction number
//! from weekly case counts, under interchangeable Gaussian Markov process
//! smoothing priors, with a stochastic SEIRS ground-truth simulator and a
//! retrospective / real-time benchmarking harness.

pub mod dist;
pub mod error;
pub mod eval;
pub mod fit;
pub mod model;
pub mod priors;
pub mod renewal;
pub mod sampler;
pub mod seeds;
pub mod seirs;
pub mod timeseries;

pub use error::{Error, Result};

//! GLM plug-in estimation of marginal treatment effects in randomized trials,
//! with prognostic-score adjustment learned from historical controls,
//! influence-function variance estimation, prospective power calculation and
//! a simulation laboratory.

pub mod data;
pub mod effect;
pub mod error;
pub mod estimator;
pub mod glm;
pub mod power;
pub mod prognostic;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

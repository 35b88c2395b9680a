//! Mixtures of probabilistic PCA with heteroscedastic, sample-group-wise
//! noise, fitted by generalized EM.

pub mod baselines;
pub mod bench;
pub mod cli;
pub mod driver;
pub mod error;
pub mod estep;
pub mod eval;
pub mod io;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod mstep;
pub mod rng;
pub mod synth;
pub mod trajectory;

#[cfg(test)]
mod testutil;

pub use driver::{fit, FitOptions, Init};
pub use error::{Error, Result};
pub use model::{Dataset, FitReport, Hyper, ModelParams, NoiseKind, StopReason};

//! History matching with Gaussian-process emulators and a sequential Monte
//! Carlo sampler for the non-implausible region.

pub mod baselines;
pub mod config;
pub mod error;
pub mod gp;
pub mod implausibility;
pub mod io;
pub mod kde;
pub mod mcmc;
pub mod models;
pub mod optim;
pub mod rng;
pub mod smc;
pub mod sobol;
pub mod space;
pub mod stats;

pub use error::{Error, Result};

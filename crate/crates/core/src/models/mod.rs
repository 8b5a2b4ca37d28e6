//! Simulators behind a common interface: parameters (plus a random stream
//! for stochastic models) to a scalar training output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::StreamKey;

pub mod gene;
pub mod pf;
pub mod rrm;
pub mod toy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Deterministic,
    Stochastic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputSemantics {
    FunctionValue,
    Distance,
    DoubleLogNegLoglik,
}

/// One simulation: the raw model quantity and the value an emulator is
/// trained on. `flagged` marks clamp events or sentinel substitution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub raw: f64,
    pub output: f64,
    pub flagged: bool,
}

impl Evaluation {
    pub fn plain(v: f64) -> Self {
        Evaluation { raw: v, output: v, flagged: false }
    }
}

pub trait SimulatorModel: Sync {
    fn kind(&self) -> ModelKind;
    fn semantics(&self) -> OutputSemantics;
    fn simulate(&self, theta: &[f64], key: StreamKey) -> Result<Evaluation>;

    /// Simulates every row; row `i` uses `key.at(i)`.
    fn simulate_batch(&self, thetas: &[Vec<f64>], key: StreamKey) -> Result<Vec<Evaluation>> {
        thetas.par_iter().enumerate().map(|(i, t)| self.simulate(t, key.at(i as u64))).collect()
    }
}

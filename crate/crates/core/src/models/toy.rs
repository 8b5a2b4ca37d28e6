//! Two-dimensional multimodal test function on `(0, pi)^2`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::space::ParameterSpace;

use super::{Evaluation, ModelKind, OutputSemantics, SimulatorModel};

pub fn toy_function(x1: f64, x2: f64) -> f64 {
    let a = (x1 * x1 / PI).sin();
    let b = (2.0 * x2 * x2 / PI).sin();
    -x1.sin() * a * a - x2.sin() * b * b
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ToyModel;

impl ToyModel {
    pub fn space() -> ParameterSpace {
        ParameterSpace::uniform_box(&[(0.0, PI), (0.0, PI)]).expect("valid box")
    }
}

impl SimulatorModel for ToyModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Deterministic
    }

    fn semantics(&self) -> OutputSemantics {
        OutputSemantics::FunctionValue
    }

    fn simulate(&self, theta: &[f64], _key: StreamKey) -> Result<Evaluation> {
        if theta.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: theta.len() });
        }
        Ok(Evaluation::plain(toy_function(theta[0], theta[1])))
    }
}

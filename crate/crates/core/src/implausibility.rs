//! Implausibility measures, waves and the non-implausible region they carve
//! out of the parameter space.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpEmulator, Prediction};
use crate::space::ParameterSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ImplausibilityMeasure {
    /// `|mean - y_obs| / sqrt(s_m^2 + sd^2 + s_d^2)`.
    Ratio { y_obs: f64, s_m: f64, s_d: f64 },
    /// Lower confidence bound `mean - r * sd` (or `mean - r * sd^2` with
    /// `variance_form`), for outputs where smaller is better.
    Lcb {
        r: f64,
        #[serde(default)]
        variance_form: bool,
    },
}

impl ImplausibilityMeasure {
    pub fn lcb(r: f64) -> Self {
        ImplausibilityMeasure::Lcb { r, variance_form: false }
    }

    pub fn evaluate(&self, pred: Prediction) -> Result<f64> {
        match *self {
            ImplausibilityMeasure::Ratio { y_obs, s_m, s_d } => {
                let denom = (s_m * s_m + pred.sd * pred.sd + s_d * s_d).sqrt();
                if denom <= 0.0 {
                    return Err(Error::ZeroDenominator);
                }
                Ok((pred.mean - y_obs).abs() / denom)
            }
            ImplausibilityMeasure::Lcb { r, variance_form } => {
                let spread = if variance_form { pred.sd * pred.sd } else { pred.sd };
                Ok(pred.mean - r * spread)
            }
        }
    }
}

/// Closed-form fields that stand in for an emulator, so a region with known
/// geometry can be encoded as a wave. They predict with zero uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnalyticField {
    /// `sum_k (theta_k - center_k)^2`
    SquaredDistance { center: Vec<f64> },
    /// `|theta_dim - center|`
    AbsDeviation { dim: usize, center: f64 },
    /// `theta_dim`
    Coordinate { dim: usize },
}

impl AnalyticField {
    pub fn value(&self, theta: &[f64]) -> f64 {
        match self {
            AnalyticField::SquaredDistance { center } => {
                theta.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum()
            }
            AnalyticField::AbsDeviation { dim, center } => (theta[*dim] - center).abs(),
            AnalyticField::Coordinate { dim } => theta[*dim],
        }
    }
}

#[derive(Clone, Debug)]
pub enum WaveEmulator {
    Gp(Arc<GpEmulator>),
    Analytic(AnalyticField),
}

impl WaveEmulator {
    pub fn predict(&self, theta: &[f64]) -> Prediction {
        match self {
            WaveEmulator::Gp(gp) => gp.predict(theta),
            WaveEmulator::Analytic(f) => Prediction { mean: f.value(theta), sd: 0.0 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct WaveRecord {
    pub index: usize,
    pub emulator: WaveEmulator,
    pub measure: ImplausibilityMeasure,
    pub cutoff: f64,
}

impl WaveRecord {
    /// A wave whose region is `{theta : field(theta) <= cutoff}`.
    pub fn analytic(index: usize, field: AnalyticField, cutoff: f64) -> Self {
        WaveRecord {
            index,
            emulator: WaveEmulator::Analytic(field),
            measure: ImplausibilityMeasure::lcb(0.0),
            cutoff,
        }
    }

    pub fn implausibility(&self, theta: &[f64]) -> Result<f64> {
        self.measure.evaluate(self.emulator.predict(theta))
    }

    /// Boundary counts as non-implausible; an undefined value is implausible.
    pub fn admits(&self, theta: &[f64]) -> bool {
        matches!(self.implausibility(theta), Ok(v) if v <= self.cutoff)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub accepted: bool,
    pub rejecting_wave: Option<usize>,
}

/// Indicator constraint checked stage by stage, stopping at the first
/// violated stage. Stages are numbered from 1.
pub trait Constraint: Sync {
    fn stages(&self) -> usize;
    fn first_violation(&self, theta: &[f64]) -> Option<usize>;

    /// Checked on every particle entering a sweep.
    fn admits_input(&self, theta: &[f64]) -> bool {
        self.first_violation(theta).is_none()
    }
}

#[derive(Clone, Debug)]
pub struct WaveChain {
    space: ParameterSpace,
    waves: Vec<WaveRecord>,
}

impl WaveChain {
    pub fn new(space: ParameterSpace) -> Self {
        WaveChain { space, waves: Vec::new() }
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn waves(&self) -> &[WaveRecord] {
        &self.waves
    }

    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }

    pub fn push(&mut self, wave: WaveRecord) -> Result<()> {
        if wave.index != self.waves.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "wave index {} does not follow {}",
                wave.index,
                self.waves.len()
            )));
        }
        if wave.cutoff.is_nan() {
            return Err(Error::NonFinite("wave cutoff"));
        }
        self.waves.push(wave);
        Ok(())
    }

    /// The first `w` waves.
    pub fn truncated(&self, w: usize) -> WaveChain {
        WaveChain { space: self.space.clone(), waves: self.waves[..w.min(self.waves.len())].to_vec() }
    }

    pub fn is_non_implausible(&self, theta: &[f64]) -> Verdict {
        match self.first_violation(theta) {
            None => Verdict { accepted: true, rejecting_wave: None },
            Some(w) => Verdict { accepted: false, rejecting_wave: Some(w) },
        }
    }
}

impl Constraint for WaveChain {
    fn stages(&self) -> usize {
        self.waves.len()
    }

    fn first_violation(&self, theta: &[f64]) -> Option<usize> {
        self.waves.iter().find(|w| !w.admits(theta)).map(|w| w.index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square() -> ParameterSpace {
        ParameterSpace::uniform_box(&[(0.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    #[test]
    fn ratio_and_lcb_values() {
        let m = ImplausibilityMeasure::Ratio { y_obs: 5.0, s_m: 1.0, s_d: 2.0 };
        assert_eq!(m.evaluate(Prediction { mean: 5.0, sd: 0.3 }).unwrap(), 0.0);
        assert!((m.evaluate(Prediction { mean: 8.0, sd: 2.0 }).unwrap() - 1.0).abs() < 1e-15);
        let l = ImplausibilityMeasure::lcb(3.0);
        assert!((l.evaluate(Prediction { mean: 2.0, sd: 0.5 }).unwrap() - 0.5).abs() < 1e-15);
        let lv = ImplausibilityMeasure::Lcb { r: 3.0, variance_form: true };
        assert!((lv.evaluate(Prediction { mean: 2.0, sd: 0.5 }).unwrap() - 1.25).abs() < 1e-15);
        let z = ImplausibilityMeasure::Ratio { y_obs: 0.0, s_m: 0.0, s_d: 0.0 };
        assert!(matches!(z.evaluate(Prediction { mean: 1.0, sd: 0.0 }), Err(Error::ZeroDenominator)));
    }

    #[test]
    fn chain_edge_cases() {
        let mut chain = WaveChain::new(unit_square());
        assert_eq!(chain.is_non_implausible(&[0.3, 0.3]), Verdict { accepted: true, rejecting_wave: None });
        chain
            .push(WaveRecord::analytic(1, AnalyticField::Coordinate { dim: 0 }, f64::NEG_INFINITY))
            .unwrap();
        for t in [[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]] {
            assert_eq!(chain.is_non_implausible(&t).rejecting_wave, Some(1));
        }
        let mut chain = WaveChain::new(unit_square());
        chain.push(WaveRecord::analytic(1, AnalyticField::Coordinate { dim: 0 }, 0.25)).unwrap();
        assert!(chain.is_non_implausible(&[0.25, 0.9]).accepted);
        assert!(chain.push(WaveRecord::analytic(3, AnalyticField::Coordinate { dim: 0 }, 0.5)).is_err());
    }

    fn random_chain(cutoffs: &[f64]) -> WaveChain {
        let mut chain = WaveChain::new(unit_square());
        for (i, &c) in cutoffs.iter().enumerate() {
            let field = if i % 2 == 0 {
                AnalyticField::SquaredDistance { center: vec![0.1 * i as f64, 0.5] }
            } else {
                AnalyticField::AbsDeviation { dim: 1, center: 0.4 }
            };
            chain.push(WaveRecord::analytic(i + 1, field, c)).unwrap();
        }
        chain
    }

    proptest! {
        #[test]
        fn nested_regions(cutoffs in prop::collection::vec(0.0f64..0.6, 1..6), x in 0.0f64..1.0, y in 0.0f64..1.0, cut in 0usize..6) {
            let full = random_chain(&cutoffs);
            let prefix = full.truncated(cut);
            if full.is_non_implausible(&[x, y]).accepted {
                prop_assert!(prefix.is_non_implausible(&[x, y]).accepted);
            }
        }

        #[test]
        fn early_exit_is_smallest_violation(cutoffs in prop::collection::vec(0.0f64..0.6, 1..6), x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let chain = random_chain(&cutoffs);
            let full_eval = chain.waves().iter().filter(|w| !w.admits(&[x, y])).map(|w| w.index).min();
            prop_assert_eq!(chain.is_non_implausible(&[x, y]).rejecting_wave, full_eval);
        }

        #[test]
        fn ratio_symmetric(y_obs in -10.0f64..10.0, d in 0.0f64..5.0, sd in 0.0f64..3.0) {
            let m = ImplausibilityMeasure::Ratio { y_obs, s_m: 0.5, s_d: 0.1 };
            let a = m.evaluate(Prediction { mean: y_obs + d, sd }).unwrap();
            let b = m.evaluate(Prediction { mean: y_obs - d, sd }).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

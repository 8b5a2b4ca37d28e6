//! Parameter domains, priors and space-filling designs.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::sobol::Sobol;

/// Marginal prior of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Prior {
    /// Uniform on `[lower, upper]`.
    Uniform { lower: f64, upper: f64 },
    /// Half-Cauchy on `(0, inf)` with density `2 / (pi s (1 + (c/s)^2))`.
    HalfCauchy { scale: f64 },
    /// Parameter is `log c` with `c` half-Cauchy; support is the real line.
    LogHalfCauchy { scale: f64 },
}

impl Prior {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Prior::Uniform { lower, upper } => (lower, upper),
            Prior::HalfCauchy { .. } => (0.0, f64::INFINITY),
            Prior::LogHalfCauchy { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        match *self {
            Prior::Uniform { lower, upper } => {
                if x >= lower && x <= upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::HalfCauchy { scale } => {
                if x > 0.0 {
                    (2.0 / (PI * scale)).ln() - (x / scale).powi(2).ln_1p()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::LogHalfCauchy { scale } => {
                // density of c evaluated at e^x, times the Jacobian e^x
                let t = 2.0 * (x - scale.ln());
                let softplus = if t > 30.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
                (2.0 / (PI * scale)).ln() - softplus + x
            }
        }
    }

    /// Prior quantile function on `(0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Prior::Uniform { lower, upper } => lower + u * (upper - lower),
            Prior::HalfCauchy { scale } => scale * (FRAC_PI_2 * u).tan(),
            Prior::LogHalfCauchy { scale } => (scale * (FRAC_PI_2 * u).tan()).ln(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            Prior::Uniform { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite()) {
                    return Err("uniform bounds must be finite".into());
                }
                if lower >= upper {
                    return Err(format!("lower {lower} must be below upper {upper}"));
                }
            }
            Prior::HalfCauchy { scale } | Prior::LogHalfCauchy { scale } => {
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(format!("half-Cauchy scale must be positive, got {scale}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub name: String,
    pub prior: Prior,
}

impl Dimension {
    pub fn uniform(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Dimension { name: name.into(), prior: Prior::Uniform { lower, upper } }
    }
}

/// Factorized prior over a product domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Dimension>", into = "Vec<Dimension>")]
pub struct ParameterSpace {
    dims: Vec<Dimension>,
}

impl TryFrom<Vec<Dimension>> for ParameterSpace {
    type Error = Error;

    fn try_from(dims: Vec<Dimension>) -> Result<Self> {
        ParameterSpace::new(dims)
    }
}

impl From<ParameterSpace> for Vec<Dimension> {
    fn from(s: ParameterSpace) -> Self {
        s.dims
    }
}

impl ParameterSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpace("at least one dimension required".into()));
        }
        for d in &dims {
            d.prior
                .validate()
                .map_err(|e| Error::InvalidSpace(format!("{}: {e}", d.name)))?;
        }
        Ok(ParameterSpace { dims })
    }

    /// Uniform prior on a box.
    pub fn uniform_box(bounds: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            bounds
                .iter()
                .enumerate()
                .map(|(k, &(lo, hi))| Dimension::uniform(format!("x{}", k + 1), lo, hi))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn names(&self) -> Vec<&str> {
        self.dims.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn bounds(&self, k: usize) -> (f64, f64) {
        self.dims[k].prior.bounds()
    }

    pub fn is_box(&self) -> bool {
        self.dims.iter().all(|d| matches!(d.prior, Prior::Uniform { .. }))
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        Ok(())
    }

    /// `log pi(theta)` including normalizing constants; `-inf` off the support.
    pub fn log_prior_density(&self, theta: &[f64]) -> Result<f64> {
        self.check_len(theta)?;
        Ok(self.log_prior_unchecked(theta))
    }

    pub(crate) fn log_prior_unchecked(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (d, &x) in self.dims.iter().zip(theta) {
            acc += d.prior.log_density(x);
            if acc == f64::NEG_INFINITY {
                break;
            }
        }
        acc
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && self.log_prior_unchecked(theta) > f64::NEG_INFINITY
    }

    /// Maps a point of the open unit cube through the marginal quantiles.
    pub fn from_unit_cube(&self, u: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(u).map(|(d, &ui)| d.prior.quantile(ui)).collect()
    }

    pub fn initial_design(&self, spec: &DesignSpec) -> Result<Vec<Vec<f64>>> {
        if spec.count == 0 {
            return Err(Error::InvalidArgument("design count must be at least 1".into()));
        }
        match spec.scheme {
            DesignScheme::SobolQmc => {
                let mut sobol = Sobol::new(self.dim())?;
                let mut out = Vec::with_capacity(spec.count);
                let mut u = vec![0.0; self.dim()];
                for _ in 0..spec.count {
                    let raw = sobol
                        .next_raw()
                        .ok_or_else(|| Error::InvalidArgument("Sobol sequence exhausted".into()))?;
                    // cell midpoints keep the origin off the boundary
                    for (ui, &x) in u.iter_mut().zip(raw) {
                        *ui = (f64::from(x) + 0.5) / 4_294_967_296.0;
                    }
                    out.push(self.from_unit_cube(&u));
                }
                Ok(out)
            }
            DesignScheme::PseudoRandom => {
                Ok(self.sample_prior(spec.count, StreamKey::new(spec.seed).named("design")))
            }
        }
    }

    /// `n` i.i.d. prior draws; row `i` uses the stream `key.at(i)`.
    pub fn sample_prior(&self, n: usize, key: StreamKey) -> Vec<Vec<f64>> {
        (0..n).map(|i| self.sample_one(key.at(i as u64))).collect()
    }

    pub fn sample_one(&self, key: StreamKey) -> Vec<f64> {
        let mut rng = key.rng();
        self.dims
            .iter()
            .map(|d| {
                // (0, 1) open interval
                let u = (f64::from(rng.random::<u32>()) + 0.5) / 4_294_967_296.0;
                d.prior.quantile(u)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DesignScheme {
    #[default]
    SobolQmc,
    PseudoRandom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub count: usize,
    pub scheme: DesignScheme,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_cauchy() -> ParameterSpace {
        ParameterSpace::new(vec![Dimension {
            name: "c".into(),
            prior: Prior::HalfCauchy { scale: 0.5 },
        }])
        .unwrap()
    }

    /// Midpoint rule on `c = u / (1 - u)`; the integrand stays bounded as u -> 1.
    fn integrate_half_line(f: impl Fn(f64) -> f64) -> f64 {
        let n = 1_000_000;
        let h = 1.0 / n as f64;
        (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) * h;
                f(u / (1.0 - u)) / (1.0 - u).powi(2)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn uniform_box_density() {
        let s = ParameterSpace::uniform_box(&[(0.0, PI), (0.0, PI)]).unwrap();
        let lp = s.log_prior_density(&[1.0, 1.0]).unwrap();
        assert!((lp - (-2.0 * PI.ln())).abs() < 1e-12);
        assert!((lp + 2.2895).abs() < 1e-4);
        assert_eq!(s.log_prior_density(&[-0.1, 1.0]).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(
            s.log_prior_density(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn half_cauchy_normalizer_by_quadrature() {
        let unnormalized = integrate_half_line(|c| 1.0 / (1.0 + 4.0 * c * c));
        assert!((unnormalized - PI / 4.0).abs() < 1e-8);
        let s = half_cauchy();
        let total = integrate_half_line(|c| s.log_prior_density(&[c]).unwrap().exp());
        assert!((total - 1.0).abs() < 1e-8);
        // density at c = 0.5 is (1 / (pi/4)) * 1/2 = 2/pi
        let lp = s.log_prior_density(&[0.5]).unwrap();
        let expected = (1.0 / unnormalized * 0.5).ln();
        assert!((lp - expected).abs() < 1e-8);
        assert!((lp - (2.0 / PI).ln()).abs() < 1e-12);
        assert_eq!(s.log_prior_density(&[-0.1]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn log_half_cauchy_is_pushforward() {
        let hc = Prior::HalfCauchy { scale: 0.5 };
        let lhc = Prior::LogHalfCauchy { scale: 0.5 };
        for &t in &[-5.0, -1.0, 0.0, 0.7, 3.0] {
            let expect = hc.log_density(f64::exp(t)) + t;
            assert!((lhc.log_density(t) - expect).abs() < 1e-12);
        }
        assert!(lhc.log_density(800.0).is_finite());
    }

    #[test]
    fn sobol_design_in_box_distinct_and_reproducible() {
        let s = ParameterSpace::uniform_box(&[(0.0, PI), (0.0, PI)]).unwrap();
        let spec = DesignSpec { count: 50, scheme: DesignScheme::SobolQmc, seed: 3 };
        let d = s.initial_design(&spec).unwrap();
        assert_eq!(d.len(), 50);
        assert!(d.iter().all(|p| s.contains(p)));
        for i in 0..d.len() {
            for j in 0..i {
                assert_ne!(d[i], d[j]);
            }
        }
        assert_eq!(d, s.initial_design(&spec).unwrap());

        let unit = ParameterSpace::uniform_box(&[(0.0, 1.0)]).unwrap();
        let spec = DesignSpec { count: 4, scheme: DesignScheme::SobolQmc, seed: 0 };
        let d = unit.initial_design(&spec).unwrap();
        let got: Vec<f64> = d.iter().map(|p| p[0]).collect();
        for (g, e) in got.iter().zip([0.0, 0.5, 0.75, 0.25]) {
            assert!((g - e).abs() < 1e-9);
        }
    }

    #[test]
    fn large_sobol_design() {
        let s = ParameterSpace::uniform_box(&[(0.0, PI), (0.0, PI)]).unwrap();
        let spec = DesignSpec { count: 1 << 20, scheme: DesignScheme::SobolQmc, seed: 0 };
        let d = s.initial_design(&spec).unwrap();
        assert_eq!(d.len(), 1_048_576);
        assert!(d.iter().all(|p| s.contains(p)));
    }

    #[test]
    fn half_cauchy_design_and_draws_positive() {
        let s = half_cauchy();
        let spec = DesignSpec { count: 64, scheme: DesignScheme::SobolQmc, seed: 0 };
        assert!(s.initial_design(&spec).unwrap().iter().all(|p| p[0] > 0.0 && p[0].is_finite()));
        assert!(s.sample_prior(10_000, StreamKey::new(1)).iter().all(|p| p[0] > 0.0));
    }

    #[test]
    fn prior_draws_mean_and_determinism() {
        let s = ParameterSpace::uniform_box(&[(0.0, PI), (-1.0, 3.0)]).unwrap();
        let n = 100_000;
        let draws = s.sample_prior(n, StreamKey::new(11));
        for k in 0..2 {
            let (lo, hi) = s.bounds(k);
            let mean = draws.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            let se = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
            assert!((mean - 0.5 * (lo + hi)).abs() < 3.0 * se, "dim {k}");
        }
        assert!(draws.iter().all(|p| s.contains(p)));
        assert_eq!(draws, s.sample_prior(n, StreamKey::new(11)));
    }

    #[test]
    fn rejects_invalid_dimensions() {
        assert!(ParameterSpace::uniform_box(&[(1.0, 1.0)]).is_err());
        assert!(ParameterSpace::new(vec![]).is_err());
        assert!(ParameterSpace::new(vec![Dimension {
            name: "c".into(),
            prior: Prior::HalfCauchy { scale: -1.0 }
        }])
        .is_err());
    }
}

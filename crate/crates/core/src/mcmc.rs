//! Metropolis-Hastings sweeps with a Gaussian random walk on marginally
//! transformed coordinates.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::implausibility::Constraint;
use crate::kde::{MarginalTransform, DEFAULT_SUBSET};
use crate::rng::StreamKey;
use crate::space::ParameterSpace;

const LOGIT_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    #[default]
    Kde,
    Logit,
}

#[derive(Clone, Copy, Debug)]
enum LogitDim {
    Interval(f64, f64),
    Positive,
    Real,
}

/// Logit on bounded dimensions, log on `(0, inf)`, identity otherwise.
#[derive(Clone, Debug)]
pub struct LogitTransform {
    dims: Vec<LogitDim>,
}

impl LogitTransform {
    pub fn new(space: &ParameterSpace) -> Self {
        let dims = (0..space.dim())
            .map(|k| match space.bounds(k) {
                (lo, hi) if lo.is_finite() && hi.is_finite() => LogitDim::Interval(lo, hi),
                (lo, _) if lo == 0.0 => LogitDim::Positive,
                _ => LogitDim::Real,
            })
            .collect();
        LogitTransform { dims }
    }

    fn forward(d: LogitDim, x: f64) -> f64 {
        match d {
            LogitDim::Interval(lo, hi) => {
                let u = ((x - lo) / (hi - lo)).clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
                (u / (1.0 - u)).ln()
            }
            LogitDim::Positive => x.max(f64::MIN_POSITIVE).ln(),
            LogitDim::Real => x,
        }
    }

    fn inverse(d: LogitDim, z: f64) -> f64 {
        match d {
            LogitDim::Interval(lo, hi) => lo + (hi - lo) / (1.0 + (-z).exp()),
            LogitDim::Positive => z.exp(),
            LogitDim::Real => z,
        }
    }

    fn log_jacobian(d: LogitDim, x: f64) -> f64 {
        match d {
            LogitDim::Interval(lo, hi) => {
                if x <= lo || x >= hi {
                    f64::NEG_INFINITY
                } else {
                    (hi - lo).ln() - (x - lo).ln() - (hi - x).ln()
                }
            }
            LogitDim::Positive => {
                if x > 0.0 {
                    -x.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            LogitDim::Real => 0.0,
        }
    }
}

/// Bijection from parameter space to the coordinates the random walk uses.
#[derive(Clone, Debug)]
pub enum MarginalMap {
    Kde(MarginalTransform),
    Logit(LogitTransform),
}

impl MarginalMap {
    pub fn fit(kind: MapKind, particles: &[Vec<f64>], space: &ParameterSpace, subset_size: usize, key: StreamKey) -> Result<Self> {
        Ok(match kind {
            MapKind::Kde => MarginalMap::Kde(MarginalTransform::fit(particles, space, subset_size, key)?),
            MapKind::Logit => MarginalMap::Logit(LogitTransform::new(space)),
        })
    }

    pub fn to_normal(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            MarginalMap::Kde(t) => t.to_normal(theta),
            MarginalMap::Logit(t) => t.dims.iter().zip(theta).map(|(&d, &x)| LogitTransform::forward(d, x)).collect(),
        }
    }

    pub fn from_normal(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            MarginalMap::Kde(t) => t.from_normal(z),
            MarginalMap::Logit(t) => Ok(t.dims.iter().zip(z).map(|(&d, &v)| LogitTransform::inverse(d, v)).collect()),
        }
    }

    /// `log |dz/dtheta|` at `theta`, where `z` is its image.
    pub fn log_jacobian(&self, theta: &[f64], z: &[f64]) -> f64 {
        match self {
            MarginalMap::Kde(t) => t.log_density_normal_coords(theta, z),
            MarginalMap::Logit(t) => t.dims.iter().zip(theta).map(|(&d, &x)| LogitTransform::log_jacobian(d, x)).sum(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProposalState {
    pub map: MarginalMap,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// lower Cholesky factor of `scale * cov`
    pub chol: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct ProposalConfig {
    pub map: MapKind,
    pub subset_size: usize,
    pub scale: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig { map: MapKind::Kde, subset_size: DEFAULT_SUBSET, scale: 1.0 }
    }
}

/// Mean and population covariance of rows.
pub fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let m = rows.len() as f64;
    let p = rows[0].len();
    let mut mean = vec![0.0; p];
    for r in rows {
        for (a, b) in mean.iter_mut().zip(r) {
            *a += b / m;
        }
    }
    let mut cov = DMatrix::zeros(p, p);
    for r in rows {
        for i in 0..p {
            let di = r[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (r[j] - mean[j]) / m;
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    (mean, cov)
}

/// Lower Cholesky factor, retrying once with a `1e-10` ridge.
pub fn cholesky_with_ridge(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("proposal covariance"));
    }
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.l());
    }
    let ridged = cov + DMatrix::identity(cov.nrows(), cov.ncols()) * 1e-10;
    ridged.cholesky().map(|c| c.l()).ok_or(Error::RankDeficient)
}

pub fn build_proposal(
    particles: &[Vec<f64>],
    space: &ParameterSpace,
    config: &ProposalConfig,
    key: StreamKey,
) -> Result<ProposalState> {
    let p = space.dim();
    if particles.len() < p + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} particles cannot define a proposal in {p} dimensions",
            particles.len()
        )));
    }
    let map = MarginalMap::fit(config.map, particles, space, config.subset_size, key)?;
    let zs: Vec<Vec<f64>> = particles.par_iter().map(|t| map.to_normal(t)).collect();
    let (mean, cov) = mean_cov(&zs);
    let chol = cholesky_with_ridge(&(&cov * config.scale))?;
    Ok(ProposalState { map, mean, cov, chol })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepDiagnostics {
    pub proposals: u64,
    pub accepts: u64,
    pub early_rejects: u64,
    /// rejections by stage `1..=stages`
    pub stage_rejects: Vec<u64>,
    pub p_acc: f64,
}

impl SweepDiagnostics {
    fn new(stages: usize) -> Self {
        SweepDiagnostics { stage_rejects: vec![0; stages], ..Default::default() }
    }

    pub fn merge(&mut self, other: &SweepDiagnostics) {
        self.proposals += other.proposals;
        self.accepts += other.accepts;
        self.early_rejects += other.early_rejects;
        if self.stage_rejects.len() < other.stage_rejects.len() {
            self.stage_rejects.resize(other.stage_rejects.len(), 0);
        }
        for (a, b) in self.stage_rejects.iter_mut().zip(&other.stage_rejects) {
            *a += b;
        }
        self.p_acc = if self.proposals > 0 { self.accepts as f64 / self.proposals as f64 } else { 0.0 };
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Accepted,
    EarlyReject,
    Stage(usize),
}

fn move_one<C: Constraint + ?Sized>(
    theta: &[f64],
    constraint: &C,
    space: &ParameterSpace,
    prop: &ProposalState,
    key: StreamKey,
) -> Result<(Outcome, Option<Vec<f64>>)> {
    let mut rng = key.rng();
    let p = theta.len();
    let z = prop.map.to_normal(theta);
    let eta = DVector::from_iterator(p, (0..p).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
    let step = &prop.chol * eta;
    let z_new: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
    let u: f64 = rng.random();
    let theta_new = prop.map.from_normal(&z_new)?;
    let lp_new = space.log_prior_unchecked(&theta_new);
    if lp_new == f64::NEG_INFINITY {
        return Ok((Outcome::EarlyReject, None));
    }
    let j_old = prop.map.log_jacobian(theta, &z);
    let j_new = prop.map.log_jacobian(&theta_new, &prop.map.to_normal(&theta_new));
    let log_r = lp_new + j_old - space.log_prior_unchecked(theta) - j_new;
    if !(u.ln() <= log_r) {
        return Ok((Outcome::EarlyReject, None));
    }
    match constraint.first_violation(&theta_new) {
        Some(stage) => Ok((Outcome::Stage(stage), None)),
        None => Ok((Outcome::Accepted, Some(theta_new))),
    }
}

/// One sweep over every particle. Particle `i` draws from `key.at(i)`, so the
/// result does not depend on how the work is scheduled.
pub fn mh_sweep<C: Constraint + ?Sized>(
    particles: &[Vec<f64>],
    constraint: &C,
    space: &ParameterSpace,
    prop: &ProposalState,
    key: StreamKey,
) -> Result<(Vec<Vec<f64>>, SweepDiagnostics)> {
    let results: Vec<Result<(Outcome, Option<Vec<f64>>)>> = particles
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            if !constraint.admits_input(theta) {
                return Err(Error::ChainViolation(i));
            }
            move_one(theta, constraint, space, prop, key.at(i as u64))
        })
        .collect();
    let mut diag = SweepDiagnostics::new(constraint.stages());
    let mut out = Vec::with_capacity(particles.len());
    for (theta, r) in particles.iter().zip(results) {
        let (outcome, moved) = r?;
        diag.proposals += 1;
        match outcome {
            Outcome::Accepted => diag.accepts += 1,
            Outcome::EarlyReject => diag.early_rejects += 1,
            Outcome::Stage(s) => diag.stage_rejects[s - 1] += 1,
        }
        out.push(moved.unwrap_or_else(|| theta.clone()));
    }
    diag.p_acc = if diag.proposals > 0 { diag.accepts as f64 / diag.proposals as f64 } else { 0.0 };
    Ok((out, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::implausibility::{AnalyticField, WaveChain, WaveRecord};
    use crate::stats::{ks_one_sample, variance};

    fn unit_box() -> ParameterSpace {
        ParameterSpace::uniform_box(&[(0.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    fn uniform_particles(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = StreamKey::new(seed).rng();
        (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect()
    }

    #[test]
    fn normal_marginals_give_identity_cov() {
        let space = ParameterSpace::uniform_box(&[(-50.0, 50.0), (-50.0, 50.0)]).unwrap();
        let mut rng = StreamKey::new(2).rng();
        let parts: Vec<Vec<f64>> =
            (0..5000).map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)]).collect();
        let prop = build_proposal(&parts, &space, &ProposalConfig::default(), StreamKey::new(3)).unwrap();
        let err = (&prop.cov - DMatrix::<f64>::identity(2, 2)).norm();
        assert!(err < 0.2, "{}", prop.cov);
    }

    #[test]
    fn duplication_does_not_change_covariance() {
        let space = unit_box();
        let parts = uniform_particles(400, 1);
        let doubled: Vec<Vec<f64>> = parts.iter().chain(&parts).cloned().collect();
        let cfg = ProposalConfig { map: MapKind::Logit, ..Default::default() };
        let a = build_proposal(&parts, &space, &cfg, StreamKey::new(0)).unwrap();
        let b = build_proposal(&doubled, &space, &cfg, StreamKey::new(0)).unwrap();
        assert!((&a.cov - &b.cov).norm() < 1e-12);
    }

    #[test]
    fn scalar_variance() {
        let space = ParameterSpace::uniform_box(&[(0.0, 1.0)]).unwrap();
        let parts: Vec<Vec<f64>> = uniform_particles(300, 5).into_iter().map(|r| vec![r[0]]).collect();
        let prop = build_proposal(&parts, &space, &ProposalConfig::default(), StreamKey::new(1)).unwrap();
        let zs: Vec<f64> = parts.iter().map(|t| prop.map.to_normal(t)[0]).collect();
        assert!((prop.cov[(0, 0)] - variance(&zs)).abs() < 1e-12);
    }

    #[test]
    fn uniform_target_accepts_often() {
        let space = unit_box();
        let parts = uniform_particles(5000, 7);
        let chain = WaveChain::new(space.clone());
        let prop = build_proposal(&parts, &space, &ProposalConfig::default(), StreamKey::new(8)).unwrap();
        let (out, d) = mh_sweep(&parts, &chain, &space, &prop, StreamKey::new(9)).unwrap();
        assert!(d.p_acc > 0.5, "{d:?}");
        assert_eq!(out.len(), parts.len());
        assert_eq!(d.accepts + d.early_rejects + d.stage_rejects.iter().sum::<u64>(), d.proposals);
    }

    #[test]
    fn impossible_target_rejects_everything() {
        let space = unit_box();
        let parts = uniform_particles(500, 7);
        let prop = build_proposal(&parts, &space, &ProposalConfig::default(), StreamKey::new(8)).unwrap();
        let mut chain = WaveChain::new(space.clone());
        chain.push(WaveRecord::analytic(1, AnalyticField::Coordinate { dim: 0 }, f64::NEG_INFINITY)).unwrap();
        // the inputs violate the chain, which is a contract breach
        assert!(matches!(mh_sweep(&parts, &chain, &space, &prop, StreamKey::new(1)), Err(Error::ChainViolation(0))));
        struct Inputs<'a>(&'a WaveChain);
        impl Constraint for Inputs<'_> {
            fn stages(&self) -> usize {
                self.0.stages()
            }
            fn first_violation(&self, theta: &[f64]) -> Option<usize> {
                self.0.first_violation(theta)
            }
            fn admits_input(&self, _: &[f64]) -> bool {
                true
            }
        }
        let (out, d) = mh_sweep(&parts, &Inputs(&chain), &space, &prop, StreamKey::new(1)).unwrap();
        assert_eq!(d.accepts, 0);
        assert_eq!(d.early_rejects + d.stage_rejects[0], 500);
        assert_eq!(out, parts);
    }

    fn interval_chain(space: &ParameterSpace) -> WaveChain {
        let mut chain = WaveChain::new(space.clone());
        chain.push(WaveRecord::analytic(1, AnalyticField::AbsDeviation { dim: 0, center: 0.4 }, 0.2)).unwrap();
        chain
    }

    #[test]
    fn stationary_on_interval() {
        let space = ParameterSpace::uniform_box(&[(0.0, 1.0)]).unwrap();
        let chain = interval_chain(&space);
        // start everything in a corner of the region
        let mut parts: Vec<Vec<f64>> = (0..1000).map(|i| vec![0.2 + 0.05 * (i as f64 / 1000.0)]).collect();
        let root = StreamKey::new(44);
        for s in 0..200 {
            let prop = build_proposal(&parts, &space, &ProposalConfig::default(), root.named("fit").at(s)).unwrap();
            parts = mh_sweep(&parts, &chain, &space, &prop, root.at(s)).unwrap().0;
        }
        let xs: Vec<f64> = parts.iter().map(|t| t[0]).collect();
        let ks = ks_one_sample(&xs, |x| ((x - 0.2) / 0.4).clamp(0.0, 1.0));
        assert!(ks.p_value > 0.01, "{ks:?}");
        assert!(xs.iter().all(|&x| (0.2..=0.6).contains(&x)));
    }

    #[test]
    fn rejected_particles_unchanged_and_schedule_free() {
        let space = unit_box();
        let parts = uniform_particles(300, 3);
        let mut chain = WaveChain::new(space.clone());
        chain.push(WaveRecord::analytic(1, AnalyticField::Coordinate { dim: 0 }, 2.0)).unwrap();
        let prop = build_proposal(&parts, &space, &ProposalConfig::default(), StreamKey::new(1)).unwrap();
        let (a, da) = mh_sweep(&parts, &chain, &space, &prop, StreamKey::new(5)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (b, db) = pool.install(|| mh_sweep(&parts, &chain, &space, &prop, StreamKey::new(5)).unwrap());
        assert_eq!(a, b);
        assert_eq!(da, db);
        let moved = a.iter().zip(&parts).filter(|(x, y)| x != y).count() as u64;
        assert_eq!(moved, da.accepts);
    }

    #[test]
    fn early_stage_matches_q_ratio() {
        // 1-d, logit map, uniform prior: acceptance of the early stage is
        // min(1, J(theta)/J(theta*)) averaged over the proposal
        let space = ParameterSpace::uniform_box(&[(0.0, 1.0)]).unwrap();
        let cfg = ProposalConfig { map: MapKind::Logit, ..Default::default() };
        let parts: Vec<Vec<f64>> = vec![vec![0.3]; 20_000];
        let prop = build_proposal(&uniform_particles(500, 1).iter().map(|r| vec![r[0]]).collect::<Vec<_>>(), &space, &cfg, StreamKey::new(0)).unwrap();
        let chain = WaveChain::new(space.clone());
        let (_, d) = mh_sweep(&parts, &chain, &space, &prop, StreamKey::new(77)).unwrap();
        // quadrature of E[min(1, r)] over eta
        let sd = prop.chol[(0, 0)];
        let z0 = prop.map.to_normal(&[0.3])[0];
        let j0 = prop.map.log_jacobian(&[0.3], &[z0]);
        let n = 20_000;
        let mut expect = 0.0;
        for i in 0..n {
            let e = -8.0 + 16.0 * (i as f64 + 0.5) / n as f64;
            let w = (-0.5 * e * e).exp() / (2.0 * std::f64::consts::PI).sqrt() * 16.0 / n as f64;
            let th = prop.map.from_normal(&[z0 + sd * e]).unwrap();
            let jn = prop.map.log_jacobian(&th, &prop.map.to_normal(&th));
            expect += w * (j0 - jn).exp().min(1.0);
        }
        let se = (expect * (1.0 - expect) / 20_000.0).sqrt();
        assert!((d.p_acc - expect).abs() < 3.0 * se, "{} vs {expect}", d.p_acc);
    }
}

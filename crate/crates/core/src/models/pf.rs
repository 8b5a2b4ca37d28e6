//! Bootstrap particle filter over a generic state-space model.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::RngExt;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{StreamKey, StreamRng};

pub trait StateSpaceModel: Sync {
    type State: Clone + Send + Sync;

    fn n_obs(&self) -> usize;
    fn initial(&self, rng: &mut StreamRng) -> Self::State;
    /// Advances to observation `t`. `None` terminates the whole filter;
    /// `abort` is raised once any particle has terminated.
    fn propagate(&self, state: &Self::State, t: usize, rng: &mut StreamRng, abort: &AtomicBool) -> Option<Self::State>;
    fn log_obs_density(&self, state: &Self::State, t: usize) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PfOutcome {
    LogLik(f64),
    /// A particle hit a simulation limit.
    Terminated,
    /// Every weight underflowed at some observation.
    ZeroLikelihood,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Systematic resampling indices from log weights.
fn systematic(logw: &[f64], u: f64) -> Vec<usize> {
    let n = logw.len();
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut idx = Vec::with_capacity(n);
    let mut cum = w[0] / total;
    let mut j = 0;
    for i in 0..n {
        let target = (i as f64 + u) / n as f64;
        while cum < target && j + 1 < n {
            j += 1;
            cum += w[j] / total;
        }
        idx.push(j);
    }
    idx
}

/// Log-likelihood estimate with `j` particles. Particle `i` at step `t` uses
/// `key.at(t).at(i)`; resampling uses its own substream.
pub fn bootstrap_pf<M: StateSpaceModel>(model: &M, j: usize, key: StreamKey) -> Result<PfOutcome> {
    if j < 2 {
        return Err(Error::InvalidArgument(format!("particle filter needs at least 2 particles, got {j}")));
    }
    let init = key.named("init");
    let mut particles: Vec<M::State> = (0..j).map(|i| model.initial(&mut init.at(i as u64).rng())).collect();
    let abort = AtomicBool::new(false);
    let mut ll = 0.0;
    let move_key = key.named("move");
    let resample_key = key.named("resample");
    for t in 0..model.n_obs() {
        let step = move_key.at(t as u64);
        let moved: Vec<Option<M::State>> = particles
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                if abort.load(Ordering::Relaxed) {
                    return None;
                }
                let r = model.propagate(x, t, &mut step.at(i as u64).rng(), &abort);
                if r.is_none() {
                    abort.store(true, Ordering::Relaxed);
                }
                r
            })
            .collect();
        if abort.load(Ordering::Relaxed) || moved.iter().any(Option::is_none) {
            return Ok(PfOutcome::Terminated);
        }
        let moved: Vec<M::State> = moved.into_iter().flatten().collect();
        let logw: Vec<f64> = moved.par_iter().map(|x| model.log_obs_density(x, t)).collect();
        let lse = log_sum_exp(&logw);
        if !lse.is_finite() {
            return Ok(PfOutcome::ZeroLikelihood);
        }
        ll += lse - (j as f64).ln();
        let u: f64 = resample_key.at(t as u64).rng().random();
        particles = systematic(&logw, u).into_iter().map(|k| moved[k].clone()).collect();
    }
    Ok(PfOutcome::LogLik(ll))
}

/// Scalar linear-Gaussian model `x_t = a x_{t-1} + N(0, q)`,
/// `y_t = x_t + N(0, r)` with `x_0 ~ N(m0, p0)`.
#[derive(Clone, Debug)]
pub struct LinearGaussian {
    pub a: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
    pub ys: Vec<f64>,
}

impl LinearGaussian {
    /// Exact log-likelihood by the Kalman filter.
    pub fn kalman_loglik(&self) -> f64 {
        let (mut m, mut p) = (self.m0, self.p0);
        let mut ll = 0.0;
        for &y in &self.ys {
            let mp = self.a * m;
            let pp = self.a * self.a * p + self.q;
            let s = pp + self.r;
            ll += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + (y - mp) * (y - mp) / s);
            let k = pp / s;
            m = mp + k * (y - mp);
            p = (1.0 - k) * pp;
        }
        ll
    }

    pub fn simulate(a: f64, q: f64, r: f64, m0: f64, p0: f64, n: usize, key: StreamKey) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = key.rng();
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let mut x = m0 + p0.sqrt() * g();
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            x = a * x + q.sqrt() * g();
            ys.push(x + r.sqrt() * g());
        }
        LinearGaussian { a, q, r, m0, p0, ys }
    }
}

impl StateSpaceModel for LinearGaussian {
    type State = f64;

    fn n_obs(&self) -> usize {
        self.ys.len()
    }

    fn initial(&self, rng: &mut StreamRng) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        let e: f64 = StandardNormal.sample(rng);
        self.m0 + self.p0.sqrt() * e
    }

    fn propagate(&self, x: &f64, _t: usize, rng: &mut StreamRng, _abort: &AtomicBool) -> Option<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let e: f64 = StandardNormal.sample(rng);
        Some(self.a * x + self.q.sqrt() * e)
    }

    fn log_obs_density(&self, x: &f64, t: usize) -> f64 {
        let d = self.ys[t] - x;
        -0.5 * ((2.0 * std::f64::consts::PI * self.r).ln() + d * d / self.r)
    }
}

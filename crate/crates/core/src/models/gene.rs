//! Prokaryotic auto-regulatory gene network: exact stochastic simulation
//! and a particle-filter likelihood under Gaussian observation error.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{StreamKey, StreamRng};
use crate::space::{Dimension, ParameterSpace, Prior};

use super::pf::{bootstrap_pf, PfOutcome, StateSpaceModel};
use super::{Evaluation, ModelKind, OutputSemantics, SimulatorModel};

pub const TRUE_RATES: [f64; 8] = [0.1, 0.7, 0.35, 0.2, 0.1, 0.9, 0.3, 0.1];
pub const INITIAL: GeneState = GeneState { dna: 5, rna: 8, p: 8, p2: 8 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneState {
    pub dna: i64,
    pub rna: i64,
    pub p: i64,
    pub p2: i64,
}

impl GeneState {
    pub fn as_array(&self) -> [i64; 4] {
        [self.dna, self.rna, self.p, self.p2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsaLimits {
    /// Any species reaching this level terminates the simulation.
    pub species_cap: i64,
    /// Events allowed per call.
    pub event_budget: u64,
}

impl Default for SsaLimits {
    fn default() -> Self {
        SsaLimits { species_cap: 100, event_budget: 1_000_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EarlyTermination;

fn hazards(c: &[f64; 8], k: i64, x: &GeneState) -> [f64; 8] {
    let (dna, rna, p, p2) = (x.dna as f64, x.rna as f64, x.p as f64, x.p2 as f64);
    [
        c[0] * dna * p2,
        c[1] * (k as f64 - dna),
        c[2] * dna,
        c[3] * rna,
        c[4] * p * (p - 1.0) / 2.0,
        c[5] * p2,
        c[6] * rna,
        c[7] * p,
    ]
}

fn apply(x: &mut GeneState, reaction: usize) {
    match reaction {
        0 => {
            x.dna -= 1;
            x.p2 -= 1;
        }
        1 => {
            x.dna += 1;
            x.p2 += 1;
        }
        2 => x.rna += 1,
        3 => x.p += 1,
        4 => {
            x.p -= 2;
            x.p2 += 1;
        }
        5 => {
            x.p += 2;
            x.p2 -= 1;
        }
        6 => x.rna -= 1,
        _ => x.p -= 1,
    }
}

/// Gillespie direct method from `x` over `duration`.
pub fn gene_simulate(
    c: &[f64; 8],
    k: i64,
    x: GeneState,
    duration: f64,
    limits: SsaLimits,
    rng: &mut StreamRng,
    abort: Option<&AtomicBool>,
) -> std::result::Result<(GeneState, u64), EarlyTermination> {
    let mut x = x;
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        let h = hazards(c, k, &x);
        let h0: f64 = h.iter().sum();
        if !(h0 > 0.0) {
            return Ok((x, events));
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / h0;
        if t > duration {
            return Ok((x, events));
        }
        let mut target = rng.random::<f64>() * h0;
        let mut reaction = 7;
        for (i, hi) in h.iter().enumerate() {
            if target < *hi {
                reaction = i;
                break;
            }
            target -= hi;
        }
        // guard against round-off landing on a zero hazard
        while h[reaction] <= 0.0 {
            reaction -= 1;
        }
        apply(&mut x, reaction);
        events += 1;
        if x.rna >= limits.species_cap || x.p >= limits.species_cap || x.p2 >= limits.species_cap {
            return Err(EarlyTermination);
        }
        if events >= limits.event_budget {
            return Err(EarlyTermination);
        }
        if events % 1024 == 0 && abort.is_some_and(|a| a.load(Ordering::Relaxed)) {
            return Err(EarlyTermination);
        }
    }
}

/// Noiseless observations of all four species at `dt, 2 dt, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneData {
    pub seed: Option<u64>,
    pub dt: f64,
    pub rows: Vec<[f64; 4]>,
}

impl GeneData {
    pub fn generate(c: &[f64; 8], k: i64, init: GeneState, dt: f64, n: usize, seed: u64) -> Self {
        let limits = SsaLimits { species_cap: i64::MAX, event_budget: u64::MAX };
        let key = StreamKey::new(seed).named("gene-data");
        let mut x = init;
        let mut rows = Vec::with_capacity(n);
        for t in 0..n {
            x = gene_simulate(c, k, x, dt, limits, &mut key.at(t as u64).rng(), None).expect("uncapped").0;
            rows.push(x.as_array().map(|v| v as f64));
        }
        GeneData { seed: Some(seed), dt, rows }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if let Some(s) = self.seed {
            writeln!(w, "# seed={s}")?;
        }
        writeln!(w, "# dt={}", self.dt)?;
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["t", "dna", "rna", "p", "p2"])?;
        for (i, r) in self.rows.iter().enumerate() {
            let t = (i + 1) as f64 * self.dt;
            cw.write_record(std::iter::once(t.to_string()).chain(r.iter().map(|v| v.to_string())))?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut seed = None;
        let mut dt = None;
        let mut body = String::new();
        for line in reader.lines() {
            let line = line?;
            if let Some(meta) = line.trim().strip_prefix('#') {
                let meta = meta.trim();
                if let Some(v) = meta.strip_prefix("seed=") {
                    seed = Some(v.trim().parse().map_err(|_| Error::Format(format!("bad seed header {v:?}")))?);
                } else if let Some(v) = meta.strip_prefix("dt=") {
                    dt = Some(v.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad dt header {v:?}")))?);
                }
                continue;
            }
            body.push_str(&line);
            body.push('\n');
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "dna", "rna", "p", "p2"] {
            return Err(Error::Format(format!("unexpected gene data header {headers:?}")));
        }
        let mut rows = Vec::new();
        let mut times = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("gene data: {e}")))?;
            if vals.len() != 5 || vals.iter().any(|v| !v.is_finite()) || vals[1..].iter().any(|v| *v < 0.0) {
                return Err(Error::Format(format!("gene data row {} invalid", rows.len() + 1)));
            }
            times.push(vals[0]);
            rows.push([vals[1], vals[2], vals[3], vals[4]]);
        }
        if rows.is_empty() {
            return Err(Error::Format("gene data has no rows".into()));
        }
        let dt = match dt {
            Some(d) => d,
            None => times[0],
        };
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Format(format!("gene data time step {dt} must be positive")));
        }
        Ok(GeneData { seed, dt, rows })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneOptions {
    pub k: i64,
    pub sigma: f64,
    pub particles: usize,
    pub limits: SsaLimits,
    /// Independent likelihood estimates averaged per training output.
    pub replicates: usize,
    pub prior_scale: f64,
}

impl Default for GeneOptions {
    fn default() -> Self {
        GeneOptions { k: 10, sigma: 0.6, particles: 200, limits: SsaLimits::default(), replicates: 1, prior_scale: 0.5 }
    }
}

/// `log(-loglik)`.
pub fn gene_training_output(loglik: f64) -> Result<f64> {
    if !(loglik < 0.0) {
        return Err(Error::NonNegativeLogLik(loglik));
    }
    Ok((-loglik).ln())
}

struct Filter<'a> {
    c: [f64; 8],
    data: &'a GeneData,
    opts: &'a GeneOptions,
    init: GeneState,
}

impl StateSpaceModel for Filter<'_> {
    type State = GeneState;

    fn n_obs(&self) -> usize {
        self.data.rows.len()
    }

    fn initial(&self, _rng: &mut StreamRng) -> GeneState {
        self.init
    }

    fn propagate(&self, x: &GeneState, _t: usize, rng: &mut StreamRng, abort: &AtomicBool) -> Option<GeneState> {
        gene_simulate(&self.c, self.opts.k, *x, self.data.dt, self.opts.limits, rng, Some(abort)).ok().map(|r| r.0)
    }

    fn log_obs_density(&self, x: &GeneState, t: usize) -> f64 {
        let s2 = self.opts.sigma * self.opts.sigma;
        let norm = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
        x.as_array()
            .iter()
            .zip(&self.data.rows[t])
            .map(|(&v, &y)| norm - 0.5 * (y - v as f64).powi(2) / s2)
            .sum()
    }
}

pub struct GeneModel {
    pub data: GeneData,
    pub options: GeneOptions,
    pub init: GeneState,
    sentinel: OnceLock<f64>,
}

impl GeneModel {
    pub fn new(data: GeneData, options: GeneOptions) -> Result<Self> {
        if options.particles < 2 {
            return Err(Error::InvalidArgument(format!("particle filter needs at least 2 particles, got {}", options.particles)));
        }
        if !(options.sigma > 0.0) || options.replicates == 0 {
            return Err(Error::InvalidArgument("sigma must be positive and replicates at least 1".into()));
        }
        Ok(GeneModel { data, options, init: INITIAL, sentinel: OnceLock::new() })
    }

    pub fn space(&self) -> ParameterSpace {
        let dims = (1..=8)
            .map(|i| Dimension { name: format!("log_c{i}"), prior: Prior::LogHalfCauchy { scale: self.options.prior_scale } })
            .collect();
        ParameterSpace::new(dims).expect("valid priors")
    }

    pub fn true_theta() -> Vec<f64> {
        TRUE_RATES.iter().map(|c| c.ln()).collect()
    }

    /// Frozen after the first batch of simulations.
    pub fn sentinel(&self) -> Option<f64> {
        self.sentinel.get().copied()
    }

    pub fn set_sentinel(&self, value: f64) -> Result<()> {
        if !(value < 0.0) {
            return Err(Error::NonNegativeLogLik(value));
        }
        self.sentinel.set(value).map_err(|_| Error::InvalidArgument("sentinel already set".into()))
    }

    pub fn loglik(&self, theta: &[f64], key: StreamKey) -> Result<PfOutcome> {
        if theta.len() != 8 {
            return Err(Error::DimensionMismatch { expected: 8, got: theta.len() });
        }
        let mut c = [0.0; 8];
        for (ci, t) in c.iter_mut().zip(theta) {
            *ci = t.exp();
        }
        let f = Filter { c, data: &self.data, opts: &self.options, init: self.init };
        bootstrap_pf(&f, self.options.particles, key)
    }

    fn finish(&self, outcomes: &[Vec<PfOutcome>]) -> Result<Vec<Evaluation>> {
        if self.sentinel.get().is_none() {
            let min = outcomes
                .iter()
                .flatten()
                .filter_map(|o| match o {
                    PfOutcome::LogLik(v) if v.is_finite() => Some(*v),
                    _ => None,
                })
                .fold(f64::INFINITY, f64::min);
            if !min.is_finite() {
                return Err(Error::InvalidArgument("no finite log-likelihood to define the sentinel".into()));
            }
            let _ = self.sentinel.set(min);
        }
        let sentinel = self.sentinel().expect("set above");
        outcomes
            .iter()
            .map(|reps| {
                let mut flagged = false;
                let mut out = 0.0;
                let mut raw = 0.0;
                for o in reps {
                    let ll = match *o {
                        PfOutcome::LogLik(v) if v.is_finite() => v,
                        _ => {
                            flagged = true;
                            sentinel
                        }
                    };
                    raw += ll / reps.len() as f64;
                    out += gene_training_output(ll)? / reps.len() as f64;
                }
                Ok(Evaluation { raw, output: out, flagged })
            })
            .collect()
    }
}

impl SimulatorModel for GeneModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Stochastic
    }

    fn semantics(&self) -> OutputSemantics {
        OutputSemantics::DoubleLogNegLoglik
    }

    fn simulate(&self, theta: &[f64], key: StreamKey) -> Result<Evaluation> {
        let reps = (0..self.options.replicates)
            .map(|r| self.loglik(theta, key.at(r as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.finish(&[reps])?[0])
    }

    /// The first batch also fixes the sentinel at its smallest finite
    /// log-likelihood.
    fn simulate_batch(&self, thetas: &[Vec<f64>], key: StreamKey) -> Result<Vec<Evaluation>> {
        let outcomes = thetas
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                (0..self.options.replicates)
                    .map(|r| self.loglik(t, key.at(i as u64).at(r as u64)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        self.finish(&outcomes)
    }
}

//! Four-reservoir conceptual rainfall-runoff model (interception,
//! unsaturated, fast and slow stores), integrated with daily explicit Euler.

use std::io::Read;

use rand::RngExt;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::space::{Dimension, ParameterSpace};

use super::{Evaluation, ModelKind, OutputSemantics, SimulatorModel};

pub const ALPHA_S: f64 = 1e-6;
pub const PARAM_NAMES: [&str; 7] = ["i_max", "u_max", "qs_max", "alpha_e", "alpha_f", "k_f", "k_s"];
const RANGES: [(f64, f64); 7] =
    [(1.0, 10.0), (10.0, 1000.0), (0.0, 100.0), (1e-6, 100.0), (-10.0, 10.0), (0.0, 10.0), (0.0, 150.0)];

/// `(1 - exp(-alpha u)) / (1 - exp(-alpha))`, linear for tiny `alpha`.
pub fn sigmoid_f(u: f64, alpha: f64) -> f64 {
    if alpha.abs() < 1e-12 {
        return u;
    }
    (-alpha * u).exp_m1() / (-alpha).exp_m1()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RrmParams {
    pub i_max: f64,
    pub u_max: f64,
    pub qs_max: f64,
    pub alpha_e: f64,
    pub alpha_f: f64,
    pub k_f: f64,
    pub k_s: f64,
}

impl RrmParams {
    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        if theta.len() != 7 {
            return Err(Error::DimensionMismatch { expected: 7, got: theta.len() });
        }
        Ok(RrmParams {
            i_max: theta[0],
            u_max: theta[1],
            qs_max: theta[2],
            alpha_e: theta[3],
            alpha_f: theta[4],
            k_f: theta[5],
            k_s: theta[6],
        })
    }

    pub fn to_theta(&self) -> Vec<f64> {
        vec![self.i_max, self.u_max, self.qs_max, self.alpha_e, self.alpha_f, self.k_f, self.k_s]
    }

    /// Uniform priors over the published ranges.
    pub fn space() -> ParameterSpace {
        let dims = PARAM_NAMES.iter().zip(RANGES).map(|(n, (lo, hi))| Dimension::uniform(*n, lo, hi)).collect();
        ParameterSpace::new(dims).expect("valid ranges")
    }

    /// Parameters used to generate synthetic observations.
    pub fn reference() -> Self {
        RrmParams { i_max: 3.0, u_max: 250.0, qs_max: 2.0, alpha_e: 2.5, alpha_f: 1.5, k_f: 0.4, k_s: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RrmState {
    pub i: f64,
    pub u: f64,
    pub f: f64,
    pub s: f64,
}

impl RrmState {
    fn total(&self) -> f64 {
        self.i + self.u + self.f + self.s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrmOptions {
    pub substeps: usize,
    /// Leading days excluded from the distance.
    pub burn_in: usize,
    /// Initial storages; `None` means `(0, u_max / 2, 0, 0)`.
    pub initial: Option<RrmState>,
}

impl Default for RrmOptions {
    fn default() -> Self {
        RrmOptions { substeps: 1, burn_in: 100, initial: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forcing {
    pub precip: Vec<f64>,
    pub pet: Vec<f64>,
}

impl Forcing {
    pub fn new(precip: Vec<f64>, pet: Vec<f64>) -> Result<Self> {
        if precip.len() != pet.len() {
            return Err(Error::Format(format!(
                "forcing columns differ in length ({} vs {})",
                precip.len(),
                pet.len()
            )));
        }
        if let Some(v) = precip.iter().chain(&pet).find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Format(format!("forcing value {v} is not a finite nonnegative number")));
        }
        Ok(Forcing { precip, pet })
    }

    pub fn len(&self) -> usize {
        self.precip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.precip.is_empty()
    }

    /// Reads `date, precipitation, potential ET` rows. A header row and
    /// `#` comments are allowed.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        read_hydrology_csv(reader).map(|(f, _)| f)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_hydrology_csv(self, None, writer)
    }

    /// Wet/dry Markov chain rainfall with exponential amounts and a seasonal
    /// evaporation cycle.
    pub fn synthetic(days: usize, key: StreamKey) -> Self {
        let mut rng = key.rng();
        let amount = Exp::new(1.0 / 8.0).expect("positive rate");
        let mut wet = false;
        let mut precip = Vec::with_capacity(days);
        let mut pet = Vec::with_capacity(days);
        for t in 0..days {
            let p_wet = if wet { 0.6 } else { 0.25 };
            wet = rng.random::<f64>() < p_wet;
            precip.push(if wet { amount.sample(&mut rng) } else { 0.0 });
            let season = (2.0 * std::f64::consts::PI * (t as f64 - 80.0) / 365.0).sin();
            pet.push((3.0 + 2.0 * season).max(0.0));
        }
        Forcing { precip, pet }
    }
}

/// Reads `day,precip,pet[,flow]` rows: an optional header line, `#`
/// comments, and the same column count throughout.
pub fn read_hydrology_csv<R: Read>(reader: R) -> Result<(Forcing, Option<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let (mut precip, mut pet, mut flow) = (Vec::new(), Vec::new(), Vec::new());
    let mut width = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if !(rec.len() == 3 || rec.len() == 4) || width.is_some_and(|w| w != rec.len()) {
            return Err(Error::Format(format!("row {}: expected 3 or 4 consistent columns, found {}", line + 1, rec.len())));
        }
        let nums: std::result::Result<Vec<f64>, _> = rec.iter().skip(1).map(str::parse::<f64>).collect();
        match nums {
            Ok(v) => {
                width = Some(rec.len());
                precip.push(v[0]);
                pet.push(v[1]);
                if let Some(&q) = v.get(2) {
                    flow.push(q);
                }
            }
            Err(_) if line == 0 => continue,
            Err(_) => return Err(Error::Format(format!("row {}: unparseable number", line + 1))),
        }
    }
    if precip.is_empty() {
        return Err(Error::Format("forcing file has no data rows".into()));
    }
    let forcing = Forcing::new(precip, pet)?;
    if width == Some(4) {
        if let Some((i, &v)) = flow.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::NonPositiveObservation { index: i, value: v });
        }
        Ok((forcing, Some(flow)))
    } else {
        Ok((forcing, None))
    }
}

pub fn write_hydrology_csv<W: std::io::Write>(forcing: &Forcing, flow: Option<&[f64]>, writer: W) -> Result<()> {
    if let Some(q) = flow {
        if q.len() != forcing.precip.len() {
            return Err(Error::DimensionMismatch { expected: forcing.precip.len(), got: q.len() });
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    if flow.is_some() {
        w.write_record(["day", "precip", "pet", "flow"])?;
    } else {
        w.write_record(["day", "precip", "pet"])?;
    }
    for t in 0..forcing.precip.len() {
        let mut row = vec![t.to_string(), forcing.precip[t].to_string(), forcing.pet[t].to_string()];
        if let Some(q) = flow {
            row.push(q[t].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Streamflow plus the water-balance ledger of one simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct RrmRun {
    pub flow: Vec<f64>,
    pub inflow: f64,
    pub evap_interception: f64,
    pub evap_actual: f64,
    pub outflow: f64,
    pub storage_start: f64,
    pub storage_end: f64,
    /// Net water added by clamping storages into range.
    pub clamp_adjustment: f64,
    pub clamp_events: u64,
}

impl RrmRun {
    /// Inflow minus outflows minus storage change.
    pub fn mass_residual(&self) -> f64 {
        self.inflow
            - self.evap_interception
            - self.evap_actual
            - self.outflow
            - (self.storage_end - self.storage_start)
    }
}

fn clamp_into(x: f64, hi: f64, adj: &mut f64, events: &mut u64) -> f64 {
    let c = if x < 0.0 {
        0.0
    } else if x > hi {
        hi
    } else {
        return x;
    };
    *adj += c - x;
    // round-off overshoots are corrected but not counted
    if (c - x).abs() > 1e-9 {
        *events += 1;
    }
    c
}

pub fn rrm_simulate(params: &RrmParams, forcing: &Forcing, opts: &RrmOptions) -> Result<RrmRun> {
    if opts.substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    if !(params.i_max > 0.0 && params.u_max > 0.0) {
        return Err(Error::InvalidArgument("storage capacities must be positive".into()));
    }
    let dt = 1.0 / opts.substeps as f64;
    let mut x = opts.initial.unwrap_or(RrmState { i: 0.0, u: 0.5 * params.u_max, f: 0.0, s: 0.0 });
    let mut run = RrmRun {
        flow: Vec::with_capacity(forcing.len()),
        inflow: 0.0,
        evap_interception: 0.0,
        evap_actual: 0.0,
        outflow: 0.0,
        storage_start: x.total(),
        storage_end: 0.0,
        clamp_adjustment: 0.0,
        clamp_events: 0,
    };
    for (&p_day, &ep_day) in forcing.precip.iter().zip(&forcing.pet) {
        let mut q_day = 0.0;
        for _ in 0..opts.substeps {
            let p = p_day * dt;
            let ep = ep_day * dt;
            let pe = (p - (params.i_max - x.i)).max(0.0);
            let ei = ep.min(x.i);
            let frac = x.u / params.u_max;
            let qf = pe * sigmoid_f(frac, params.alpha_f);
            let ea = (ep - ei) * sigmoid_f(frac, params.alpha_e);
            let qs = params.qs_max * dt * sigmoid_f(frac, ALPHA_S);
            let q_fast = params.k_f * x.f * dt;
            let q_slow = params.k_s * x.s * dt;

            let (adj, ev) = (&mut run.clamp_adjustment, &mut run.clamp_events);
            x = RrmState {
                i: clamp_into(x.i + p - ei - pe, params.i_max, adj, ev),
                u: clamp_into(x.u + pe - qf - ea - qs, params.u_max, adj, ev),
                f: clamp_into(x.f + qf - q_fast, f64::INFINITY, adj, ev),
                s: clamp_into(x.s + qs - q_slow, f64::INFINITY, adj, ev),
            };
            run.inflow += p;
            run.evap_interception += ei;
            run.evap_actual += ea;
            run.outflow += q_fast + q_slow;
            q_day += q_fast + q_slow;
        }
        if !q_day.is_finite() {
            return Err(Error::NonFinite("streamflow"));
        }
        run.flow.push(q_day);
    }
    run.storage_end = x.total();
    Ok(run)
}

/// `sum_t (obs_t - sim_t)^2 / obs_t`
pub fn rrm_distance(sim: &[f64], obs: &[f64]) -> Result<f64> {
    if sim.len() != obs.len() {
        return Err(Error::DimensionMismatch { expected: obs.len(), got: sim.len() });
    }
    let mut d = 0.0;
    for (t, (&s, &o)) in sim.iter().zip(obs).enumerate() {
        if !(o > 0.0) {
            return Err(Error::NonPositiveObservation { index: t, value: o });
        }
        d += (o - s) * (o - s) / o;
    }
    Ok(d)
}

/// Simulated flow with multiplicative log-normal noise, floored so every
/// observation is strictly positive.
pub fn synthetic_observations(
    params: &RrmParams,
    forcing: &Forcing,
    opts: &RrmOptions,
    noise_sd: f64,
    key: StreamKey,
) -> Result<Vec<f64>> {
    let run = rrm_simulate(params, forcing, opts)?;
    let mut rng = key.rng();
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(run.flow.iter().map(|q| (q * noise.sample(&mut rng).exp()).max(1e-3)).collect())
}

#[derive(Clone, Debug)]
pub struct RrmModel {
    pub forcing: Forcing,
    pub observed: Vec<f64>,
    pub options: RrmOptions,
}

impl RrmModel {
    pub fn new(forcing: Forcing, observed: Vec<f64>, options: RrmOptions) -> Result<Self> {
        if forcing.len() != observed.len() {
            return Err(Error::DimensionMismatch { expected: forcing.len(), got: observed.len() });
        }
        if options.burn_in >= forcing.len() {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} leaves no days out of {}",
                options.burn_in,
                forcing.len()
            )));
        }
        if let Some((t, &v)) = observed.iter().enumerate().skip(options.burn_in).find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveObservation { index: t, value: v });
        }
        Ok(RrmModel { forcing, observed, options })
    }

    /// Synthetic forcing of `burn_in + days` days and noisy observations
    /// from the reference parameters.
    pub fn synthetic(days: usize, options: RrmOptions, key: StreamKey) -> Result<Self> {
        let forcing = Forcing::synthetic(options.burn_in + days, key.named("forcing"));
        let obs = synthetic_observations(&RrmParams::reference(), &forcing, &options, 0.1, key.named("obs-noise"))?;
        RrmModel::new(forcing, obs, options)
    }

    pub fn run(&self, theta: &[f64]) -> Result<RrmRun> {
        rrm_simulate(&RrmParams::from_theta(theta)?, &self.forcing, &self.options)
    }
}

impl SimulatorModel for RrmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Deterministic
    }

    fn semantics(&self) -> OutputSemantics {
        OutputSemantics::Distance
    }

    fn simulate(&self, theta: &[f64], _key: StreamKey) -> Result<Evaluation> {
        let run = self.run(theta)?;
        let b = self.options.burn_in;
        let d = rrm_distance(&run.flow[b..], &self.observed[b..])?;
        Ok(Evaluation { raw: d, output: d, flagged: run.clamp_events > 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_limits() {
        for a in [-10.0, -1.0, 1e-6, 2.0, 100.0] {
            assert!((sigmoid_f(1.0, a) - 1.0).abs() < 1e-12);
            assert_eq!(sigmoid_f(0.0, a), 0.0);
        }
        assert!((sigmoid_f(0.5, 1e-9) - 0.5).abs() < 1e-6);
        assert_eq!(sigmoid_f(0.5, 0.0), 0.5);
    }

    #[test]
    fn fast_store_decays_geometrically() {
        let p = RrmParams { i_max: 5.0, u_max: 100.0, qs_max: 0.0, alpha_e: 1.0, alpha_f: 1.0, k_f: 0.5, k_s: 0.1 };
        let forcing = Forcing::new(vec![0.0; 10], vec![0.0; 10]).unwrap();
        let opts = RrmOptions { initial: Some(RrmState { i: 0.0, u: 0.0, f: 8.0, s: 0.0 }), ..Default::default() };
        let run = rrm_simulate(&p, &forcing, &opts).unwrap();
        for (t, q) in run.flow.iter().enumerate() {
            let f_t = 8.0 * 0.5f64.powi(t as i32);
            assert!((q - 0.5 * f_t).abs() < 1e-12);
        }
        assert_eq!(run.clamp_events, 0);
        assert!(run.mass_residual().abs() < 1e-12);
    }

    #[test]
    fn distance_values() {
        assert_eq!(rrm_distance(&[1.0, 4.0], &[1.0, 4.0]).unwrap(), 0.0);
        assert!((rrm_distance(&[2.0, 2.0], &[1.0, 4.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(rrm_distance(&[1.0], &[0.0]), Err(Error::NonPositiveObservation { index: 0, .. })));
        let d1 = rrm_distance(&[1.5, 3.0], &[1.0, 4.0]).unwrap();
        let d2 = rrm_distance(&[2.0, 2.0], &[1.0, 4.0]).unwrap();
        assert!((d2 - 4.0 * d1).abs() < 1e-12);
    }

    #[test]
    fn forcing_csv_round_trip() {
        let f = Forcing::synthetic(50, StreamKey::new(1));
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let g = Forcing::read_csv(&buf[..]).unwrap();
        assert_eq!(f, g);
        assert!(Forcing::read_csv(&b"d,p,e\n1,2\n"[..]).is_err());
        assert!(Forcing::read_csv(&b"1,-2,3\n"[..]).is_err());
    }

    #[test]
    fn mass_balance_with_and_without_clamps() {
        let model = RrmModel::synthetic(200, RrmOptions::default(), StreamKey::new(2)).unwrap();
        let space = RrmParams::space();
        let mut unclamped = 0;
        for (i, mut theta) in space.sample_prior(400, StreamKey::new(3)).into_iter().enumerate() {
            if i % 2 == 1 {
                // reservoir constants below one per day rarely overshoot
                theta[5] /= 10.0;
                theta[6] /= 150.0;
            }
            let run = model.run(&theta).unwrap();
            assert!((run.mass_residual() + run.clamp_adjustment).abs() < 1e-6 * (1.0 + run.inflow));
            if run.clamp_events == 0 {
                unclamped += 1;
                assert!(run.mass_residual().abs() < 1e-6);
            }
        }
        let reference = model.run(&RrmParams::reference().to_theta()).unwrap();
        assert_eq!(reference.clamp_events, 0);
        assert!(reference.mass_residual().abs() < 1e-6);
        assert!(unclamped > 0);
    }
}

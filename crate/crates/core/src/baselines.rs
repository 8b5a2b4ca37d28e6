//! Reference samplers: brute-force QMC history matching, rejection from the
//! prior, ad-hoc transformed-normal samplers, emulator-free SMC
//! optimisation and likelihood-annealed Bayesian SMC.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpEmulator, GpFitConfig, GpTrainingSet};
use crate::implausibility::{Constraint, ImplausibilityMeasure, WaveChain, WaveEmulator, WaveRecord};
use crate::mcmc::{cholesky_with_ridge, mean_cov, MapKind, MarginalMap};
use crate::models::pf::PfOutcome;
use crate::models::{gene::GeneModel, ModelKind, SimulatorModel};
use crate::rng::StreamKey;
use crate::smc::{adaptive_repeats, diversify, ess, reweight_and_resample, select_cutoff, MoveConfig, MoveSummary, RepeatRule};
use crate::space::{DesignScheme, DesignSpec, ParameterSpace};

const BATCH: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BruteForceConfig {
    pub points: usize,
    pub training: usize,
    pub alpha: f64,
    pub waves: usize,
    pub measure: ImplausibilityMeasure,
    pub gp: GpFitConfig,
    pub seed: u64,
}

impl Default for BruteForceConfig {
    fn default() -> Self {
        BruteForceConfig {
            points: 1 << 20,
            training: 50,
            alpha: 0.5,
            waves: 9,
            measure: ImplausibilityMeasure::lcb(3.0),
            gp: GpFitConfig::default(),
            seed: 1,
        }
    }
}

pub struct BruteForce {
    pub points: Vec<Vec<f64>>,
    pub chain: WaveChain,
    /// Indices into `points`; entry 0 is every point.
    pub survivors: Vec<Vec<usize>>,
    pub simulations: u64,
    /// Set when the survivors ran short of training points.
    pub stopped_early: bool,
}

impl BruteForce {
    pub fn final_survivors(&self) -> Vec<Vec<f64>> {
        self.survivors.last().expect("wave 0").iter().map(|&i| self.points[i].clone()).collect()
    }
}

/// History matching over a fixed QMC point set: each wave trains on a
/// uniform subset of the current survivors and keeps the best `alpha`.
pub fn brute_force_history_match<M: SimulatorModel + ?Sized>(
    model: &M,
    space: &ParameterSpace,
    cfg: &BruteForceConfig,
) -> Result<BruteForce> {
    if !space.is_box() {
        return Err(Error::InvalidArgument("brute force needs a box-bounded space".into()));
    }
    let points = space.initial_design(&DesignSpec { count: cfg.points, scheme: DesignScheme::SobolQmc, seed: cfg.seed })?;
    let root = StreamKey::new(cfg.seed).named("brute-force");
    let mut chain = WaveChain::new(space.clone());
    let mut survivors = vec![(0..points.len()).collect::<Vec<usize>>()];
    let mut simulations = 0;
    let mut stopped_early = false;
    for w in 1..=cfg.waves {
        let current = survivors.last().expect("wave 0");
        if current.len() < cfg.training {
            warn!("brute force: {} survivors cannot supply {} training points", current.len(), cfg.training);
            stopped_early = true;
            break;
        }
        let key = root.at(w as u64);
        let mut pick = sample(&mut key.named("training").rng(), current.len(), cfg.training).into_vec();
        pick.sort_unstable();
        let thetas: Vec<Vec<f64>> = pick.iter().map(|&j| points[current[j]].clone()).collect();
        let evals = model.simulate_batch(&thetas, key.named("simulate"))?;
        simulations += thetas.len() as u64;
        let mut set = GpTrainingSet::new(thetas, evals.iter().map(|e| e.output).collect())?;
        if model.kind() == ModelKind::Deterministic {
            set = set.dedup()?;
        }
        let gp = GpFitConfig { seed: key.named("gp").raw(), ..cfg.gp.clone() };
        let em = Arc::new(GpEmulator::fit(set, &gp)?);
        let mut record = WaveRecord { index: w, emulator: WaveEmulator::Gp(em), measure: cfg.measure.clone(), cutoff: 0.0 };
        let values: Vec<f64> =
            current.par_iter().map(|&i| record.implausibility(&points[i]).unwrap_or(f64::INFINITY)).collect();
        let sel = select_cutoff(&values, cfg.alpha)?;
        record.cutoff = sel.cutoff;
        let next: Vec<usize> = current.iter().zip(&sel.survivors).filter(|(_, &s)| s).map(|(&i, _)| i).collect();
        info!("brute force wave {w}: cutoff {:.6e}, {} survivors", sel.cutoff, next.len());
        chain.push(record)?;
        survivors.push(next);
    }
    Ok(BruteForce { points, chain, survivors, simulations, stopped_early })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbortRule {
    pub min_acceptance: f64,
    pub after_proposals: u64,
}

impl Default for AbortRule {
    fn default() -> Self {
        AbortRule { min_acceptance: 1e-6, after_proposals: 10_000_000 }
    }
}

#[derive(Clone, Debug)]
pub struct SampleOutcome {
    pub samples: Vec<Vec<f64>>,
    pub proposals: u64,
    pub acceptance_rate: f64,
    /// False when the abort rule fired before `n_target` samples.
    pub complete: bool,
}

/// Draws proposal `j` with `draw(j)` in parallel batches, keeping the first
/// `n_target` admitted draws in proposal order.
fn accept_in_order<C, F>(constraint: &C, n_target: usize, abort: AbortRule, draw: F) -> Result<SampleOutcome>
where
    C: Constraint + ?Sized,
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    let mut samples = Vec::with_capacity(n_target);
    let mut proposals = 0u64;
    while samples.len() < n_target {
        let start = proposals;
        let batch: Vec<Option<Vec<f64>>> = (start..start + BATCH as u64)
            .into_par_iter()
            .map(|j| draw(j).map(|t| if constraint.admits_input(&t) { Some(t) } else { None }))
            .collect::<Result<_>>()?;
        for t in batch {
            proposals += 1;
            if let Some(t) = t {
                samples.push(t);
                if samples.len() == n_target {
                    break;
                }
            }
        }
        let rate = samples.len() as f64 / proposals as f64;
        if samples.len() < n_target && proposals >= abort.after_proposals && rate < abort.min_acceptance {
            warn!("acceptance {rate:.2e} after {proposals} proposals; aborting with {} samples", samples.len());
            return Ok(SampleOutcome { samples, proposals, acceptance_rate: rate, complete: false });
        }
    }
    let acceptance_rate = samples.len() as f64 / proposals as f64;
    Ok(SampleOutcome { samples, proposals, acceptance_rate, complete: true })
}

/// Exact sampler: prior draws kept when they satisfy every wave.
pub fn rejection_sampler(chain: &WaveChain, n_target: usize, key: StreamKey, abort: AbortRule) -> Result<SampleOutcome> {
    let space = chain.space();
    let key = key.named("rejection");
    accept_in_order(chain, n_target, abort, |j| Ok(space.sample_one(key.at(j))))
}

#[derive(Clone, Debug)]
pub struct AdhocWave {
    pub wave: usize,
    pub proposals: u64,
    pub acceptance_rate: f64,
}

/// Wave by wave, fits a normal to the transformed population and draws from
/// it until `n_target` draws satisfy the chain so far. Not uniform on the
/// non-implausible region.
pub fn adhoc_sampler(
    chain: &WaveChain,
    initial: Vec<Vec<f64>>,
    kind: MapKind,
    n_target: usize,
    key: StreamKey,
    abort: AbortRule,
) -> Result<(SampleOutcome, Vec<AdhocWave>)> {
    let space = chain.space();
    let mut particles = initial;
    let mut trace = Vec::new();
    let mut last = SampleOutcome { samples: particles.clone(), proposals: 0, acceptance_rate: 1.0, complete: true };
    for w in 1..=chain.len() {
        let wave_key = key.named("adhoc").at(w as u64);
        let map = MarginalMap::fit(kind, &particles, space, crate::kde::DEFAULT_SUBSET, wave_key.named("map"))?;
        let zs: Vec<Vec<f64>> = particles.par_iter().map(|t| map.to_normal(t)).collect();
        let (mean, cov) = mean_cov(&zs);
        let chol = cholesky_with_ridge(&cov)?;
        let target = chain.truncated(w);
        let draw_key = wave_key.named("draw");
        let out = accept_in_order(&target, n_target, abort, |j| {
            let mut rng = draw_key.at(j).rng();
            let eta = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(&mut rng));
            let z = DVector::from_column_slice(&mean) + &chol * eta;
            map.from_normal(z.as_slice())
        })?;
        info!("adhoc {kind:?} wave {w}: acceptance {:.4}", out.acceptance_rate);
        trace.push(AdhocWave { wave: w, proposals: out.proposals, acceptance_rate: out.acceptance_rate });
        if !out.complete {
            return Ok((out, trace));
        }
        particles = out.samples.clone();
        last = out;
    }
    Ok((last, trace))
}

fn theta_hash(theta: &[f64]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in theta {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Simulated distance below a cutoff; each new parameter costs one
/// simulation.
struct DistanceConstraint<'a, M: SimulatorModel + ?Sized> {
    model: &'a M,
    cutoff: f64,
    key: StreamKey,
    cache: Mutex<HashMap<Vec<u64>, f64>>,
    simulations: AtomicU64,
}

impl<M: SimulatorModel + ?Sized> DistanceConstraint<'_, M> {
    fn distance(&self, theta: &[f64]) -> f64 {
        let bits: Vec<u64> = theta.iter().map(|v| v.to_bits()).collect();
        if let Some(&d) = self.cache.lock().expect("cache lock").get(&bits) {
            return d;
        }
        self.simulations.fetch_add(1, Ordering::Relaxed);
        let d = match self.model.simulate(theta, self.key.at(theta_hash(theta))) {
            Ok(e) if e.output.is_finite() => e.output,
            _ => f64::INFINITY,
        };
        self.cache.lock().expect("cache lock").insert(bits, d);
        d
    }

    fn retain(&self, keep: &[Vec<f64>]) {
        let mut cache = self.cache.lock().expect("cache lock");
        let keys: std::collections::HashSet<Vec<u64>> =
            keep.iter().map(|t| t.iter().map(|v| v.to_bits()).collect()).collect();
        cache.retain(|k, _| keys.contains(k));
    }
}

impl<M: SimulatorModel + ?Sized> Constraint for DistanceConstraint<'_, M> {
    fn stages(&self) -> usize {
        1
    }

    fn first_violation(&self, theta: &[f64]) -> Option<usize> {
        if self.distance(theta) <= self.cutoff {
            None
        } else {
            Some(1)
        }
    }

    // current particles already satisfy the cutoff
    fn admits_input(&self, _theta: &[f64]) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimisationConfig {
    pub particles: usize,
    pub alpha: f64,
    pub waves: usize,
    #[serde(rename = "move")]
    pub moves: MoveConfig,
    pub seed: u64,
}

impl Default for OptimisationConfig {
    fn default() -> Self {
        OptimisationConfig { particles: 2000, alpha: 0.5, waves: 10, moves: MoveConfig::default(), seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimisationWave {
    pub wave: usize,
    pub cutoff: f64,
    pub survivors: usize,
    pub mean_distance: f64,
    pub moves: MoveSummary,
    pub simulations: u64,
}

pub struct OptimisationOutcome {
    pub particles: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    pub waves: Vec<OptimisationWave>,
    pub simulations: u64,
}

/// The engine loop with the simulated distance in place of an emulator, so
/// every MCMC proposal that passes the prior stage costs a simulation.
pub fn smc_optimisation<M: SimulatorModel + ?Sized>(
    model: &M,
    space: &ParameterSpace,
    cfg: &OptimisationConfig,
) -> Result<OptimisationOutcome> {
    if model.kind() != ModelKind::Deterministic {
        return Err(Error::InvalidArgument("SMC optimisation needs a deterministic distance model".into()));
    }
    let root = StreamKey::new(cfg.seed).named("smc-opt");
    let mut constraint = DistanceConstraint {
        model,
        cutoff: f64::INFINITY,
        key: root.named("simulate"),
        cache: Mutex::new(HashMap::new()),
        simulations: AtomicU64::new(0),
    };
    let mut particles = space.sample_prior(cfg.particles, root.named("prior"));
    let mut distances: Vec<f64> = particles.par_iter().map(|t| constraint.distance(t)).collect();
    let mut waves = Vec::new();
    for w in 1..=cfg.waves {
        let key = root.at(w as u64);
        let sel = select_cutoff(&distances, cfg.alpha)?;
        let resampled = reweight_and_resample(&particles, &sel.survivors, key.named("resample"))?;
        constraint.cutoff = sel.cutoff;
        constraint.retain(&resampled);
        let (moved, moves) = diversify(resampled, &constraint, space, &cfg.moves, key)?;
        particles = moved;
        distances = particles.par_iter().map(|t| constraint.distance(t)).collect();
        let mean_distance = distances.iter().sum::<f64>() / distances.len() as f64;
        let simulations = constraint.simulations.load(Ordering::Relaxed);
        info!("smc-opt wave {w}: cutoff {:.6e} mean {mean_distance:.6e} sims {simulations}", sel.cutoff);
        waves.push(OptimisationWave { wave: w, cutoff: sel.cutoff, survivors: sel.count, mean_distance, moves, simulations });
    }
    let simulations = constraint.simulations.load(Ordering::Relaxed);
    Ok(OptimisationOutcome { particles, distances, waves, simulations })
}

/// Log-likelihood, exact or estimated; `-inf` means zero likelihood.
pub trait LogLikelihood: Sync {
    fn log_likelihood(&self, theta: &[f64], key: StreamKey) -> Result<f64>;
}

impl LogLikelihood for GeneModel {
    fn log_likelihood(&self, theta: &[f64], key: StreamKey) -> Result<f64> {
        Ok(match self.loglik(theta, key)? {
            PfOutcome::LogLik(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealConfig {
    pub particles: usize,
    pub target_ess_ratio: f64,
    pub min_increment: f64,
    /// Random-walk covariance multiplier; `2.38^2 / p` when unset.
    pub scale: Option<f64>,
    pub repeats: RepeatRule,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            particles: 1000,
            target_ess_ratio: 0.5,
            min_increment: 1e-4,
            scale: None,
            repeats: RepeatRule::default(),
            max_steps: 1000,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealStep {
    pub temperature: f64,
    pub ess: f64,
    pub p_acc: f64,
    pub repeats: usize,
    pub likelihood_evaluations: u64,
}

pub struct AnnealOutcome {
    pub particles: Vec<Vec<f64>>,
    pub loglik: Vec<f64>,
    /// Starts at 0 and ends at 1.
    pub temperatures: Vec<f64>,
    pub steps: Vec<AnnealStep>,
    pub likelihood_evaluations: u64,
}

fn tempered_weights(ll: &[f64], delta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = ll.iter().map(|&l| if l == f64::NEG_INFINITY { f64::NEG_INFINITY } else { delta * l }).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![0.0; ll.len()];
    }
    scaled.iter().map(|s| (s - m).exp()).collect()
}

/// Next temperature increment: the whole remainder when the ESS stays above
/// target, otherwise bisection for ESS = target.
fn next_increment(ll: &[f64], remaining: f64, target: f64, min_inc: f64) -> f64 {
    let ess_at = |d: f64| ess(&tempered_weights(ll, d));
    if ess_at(remaining) >= target {
        return remaining;
    }
    let floor = min_inc.min(remaining);
    if !(ess_at(floor) >= target) {
        warn!("temperature bisection failed; using increment {floor:e}");
        return floor;
    }
    let (mut lo, mut hi) = (floor, remaining);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ess_at(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * remaining {
            break;
        }
    }
    lo
}

/// Sequential Monte Carlo from the prior to the posterior through
/// `pi(theta) L(theta)^gamma`, with multinomial resampling and
/// Gaussian random-walk moves.
pub fn bayes_smc_anneal<L: LogLikelihood + ?Sized>(
    lik: &L,
    space: &ParameterSpace,
    cfg: &AnnealConfig,
) -> Result<AnnealOutcome> {
    let m = cfg.particles;
    let p = space.dim();
    if m < p + 1 || !(cfg.target_ess_ratio > 0.0 && cfg.target_ess_ratio < 1.0) {
        return Err(Error::InvalidArgument("anneal needs more than p particles and an ESS ratio in (0, 1)".into()));
    }
    let scale = cfg.scale.unwrap_or(2.38 * 2.38 / p as f64);
    let root = StreamKey::new(cfg.seed).named("anneal");
    let evals = AtomicU64::new(0);
    let loglik = |t: &[f64], k: StreamKey| -> Result<f64> {
        evals.fetch_add(1, Ordering::Relaxed);
        lik.log_likelihood(t, k)
    };
    let mut particles = space.sample_prior(m, root.named("prior"));
    let init = root.named("loglik");
    let mut ll: Vec<f64> =
        particles.par_iter().enumerate().map(|(i, t)| loglik(t, init.at(i as u64))).collect::<Result<_>>()?;
    let mut gamma = 0.0;
    let mut temperatures = vec![0.0];
    let mut steps = Vec::new();
    for step in 1..=cfg.max_steps {
        let key = root.at(step as u64);
        let delta = next_increment(&ll, 1.0 - gamma, cfg.target_ess_ratio * m as f64, cfg.min_increment);
        let next = if delta >= 1.0 - gamma { 1.0 } else { gamma + delta };
        let w = tempered_weights(&ll, next - gamma);
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NoSurvivors);
        }
        let step_ess = ess(&w);
        let mut cum = Vec::with_capacity(m);
        let mut acc = 0.0;
        for wi in &w {
            acc += wi / total;
            cum.push(acc);
        }
        let rs = key.named("resample");
        let picks: Vec<usize> = (0..m)
            .map(|i| {
                let u: f64 = rs.at(i as u64).rng().random::<f64>() * acc;
                cum.partition_point(|&c| c < u).min(m - 1)
            })
            .collect();
        particles = picks.iter().map(|&k| particles[k].clone()).collect();
        ll = picks.iter().map(|&k| ll[k]).collect();
        gamma = next;

        let (_, cov) = mean_cov(&particles);
        let chol = cholesky_with_ridge(&(cov * scale))?;
        let sweep = |parts: &mut Vec<Vec<f64>>, lls: &mut Vec<f64>, s: u64| -> Result<f64> {
            let sk = key.named("move").at(s);
            let moved: Vec<(Vec<f64>, f64, bool)> = parts
                .par_iter()
                .zip(lls.par_iter())
                .enumerate()
                .map(|(i, (t, &l))| rw_step(t, l, gamma, space, &chol, sk.at(i as u64), &loglik))
                .collect::<Result<_>>()?;
            let accepted = moved.iter().filter(|x| x.2).count();
            for (i, (t, l, _)) in moved.into_iter().enumerate() {
                parts[i] = t;
                lls[i] = l;
            }
            Ok(accepted as f64 / m as f64)
        };
        let p_acc = sweep(&mut particles, &mut ll, 0)?;
        let repeats = adaptive_repeats(p_acc, &cfg.repeats);
        for s in 1..=repeats {
            sweep(&mut particles, &mut ll, s as u64)?;
        }
        temperatures.push(gamma);
        let likelihood_evaluations = evals.load(Ordering::Relaxed);
        info!("anneal step {step}: gamma {gamma:.6} ess {step_ess:.1} p_acc {p_acc:.3} R {repeats}");
        steps.push(AnnealStep { temperature: gamma, ess: step_ess, p_acc, repeats, likelihood_evaluations });
        if gamma >= 1.0 {
            break;
        }
    }
    if gamma < 1.0 {
        warn!("annealing stopped at temperature {gamma} after {} steps", cfg.max_steps);
    }
    let likelihood_evaluations = evals.load(Ordering::Relaxed);
    Ok(AnnealOutcome { particles, loglik: ll, temperatures, steps, likelihood_evaluations })
}

fn rw_step(
    theta: &[f64],
    ll: f64,
    gamma: f64,
    space: &ParameterSpace,
    chol: &DMatrix<f64>,
    key: StreamKey,
    loglik: &(dyn Fn(&[f64], StreamKey) -> Result<f64> + Sync),
) -> Result<(Vec<f64>, f64, bool)> {
    let mut rng = key.rng();
    let eta = DVector::from_fn(theta.len(), |_, _| StandardNormal.sample(&mut rng));
    let step = chol * eta;
    let prop: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
    let u: f64 = rng.random();
    let lp_new = space.log_prior_density(&prop)?;
    if lp_new == f64::NEG_INFINITY {
        return Ok((theta.to_vec(), ll, false));
    }
    let lp_old = space.log_prior_density(theta)?;
    let ll_new = loglik(&prop, key.named("loglik"))?;
    let tempered = |l: f64| if l == f64::NEG_INFINITY { f64::NEG_INFINITY } else { gamma * l };
    let log_r = lp_new + tempered(ll_new) - lp_old - tempered(ll);
    if log_r.is_finite() && u.ln() < log_r || log_r == f64::INFINITY {
        Ok((prop, ll_new, true))
    } else {
        Ok((theta.to_vec(), ll, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::implausibility::AnalyticField;
    use crate::models::toy::ToyModel;

    fn half_box() -> WaveChain {
        let mut c = WaveChain::new(ParameterSpace::uniform_box(&[(0.0, 1.0), (0.0, 1.0)]).unwrap());
        c.push(WaveRecord::analytic(1, AnalyticField::Coordinate { dim: 0 }, 0.5)).unwrap();
        c
    }

    #[test]
    fn rejection_rates() {
        let empty = WaveChain::new(ParameterSpace::uniform_box(&[(0.0, 1.0)]).unwrap());
        let out = rejection_sampler(&empty, 500, StreamKey::new(1), AbortRule::default()).unwrap();
        assert_eq!(out.acceptance_rate, 1.0);
        let chain = half_box();
        let out = rejection_sampler(&chain, 20_000, StreamKey::new(2), AbortRule::default()).unwrap();
        let n = out.proposals as f64;
        let se = (0.25 / n).sqrt();
        assert!((out.acceptance_rate - 0.5).abs() < 3.0 * se, "{}", out.acceptance_rate);
        assert!(out.samples.iter().all(|t| chain.is_non_implausible(t).accepted));
    }

    #[test]
    fn rejection_aborts() {
        let mut c = WaveChain::new(ParameterSpace::uniform_box(&[(0.0, 1.0)]).unwrap());
        c.push(WaveRecord::analytic(1, AnalyticField::Coordinate { dim: 0 }, -1.0)).unwrap();
        let out = rejection_sampler(&c, 10, StreamKey::new(1), AbortRule { min_acceptance: 1e-6, after_proposals: 50_000 }).unwrap();
        assert!(!out.complete);
        assert!(out.samples.is_empty());
    }

    #[test]
    fn adhoc_centroid() {
        let space = ParameterSpace::uniform_box(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let mut chain = WaveChain::new(space.clone());
        chain.push(WaveRecord::analytic(1, AnalyticField::SquaredDistance { center: vec![0.5, 0.5] }, 0.04)).unwrap();
        let prior = space.sample_prior(2000, StreamKey::new(3));
        for kind in [MapKind::Logit, MapKind::Kde] {
            let (out, _) = adhoc_sampler(&chain, prior.clone(), kind, 4000, StreamKey::new(4), AbortRule::default()).unwrap();
            assert!(out.samples.iter().all(|t| chain.is_non_implausible(t).accepted));
            assert!(out.samples.iter().all(|t| space.contains(t)));
            // only the logit map is symmetric about the centre
            if kind == MapKind::Kde {
                continue;
            }
            for k in 0..2 {
                let xs: Vec<f64> = out.samples.iter().map(|t| t[k]).collect();
                let mean = crate::stats::mean(&xs);
                let se = (crate::stats::variance(&xs) / xs.len() as f64).sqrt();
                assert!((mean - 0.5).abs() < 3.0 * se, "{kind:?} {mean}");
            }
        }
    }

    #[test]
    fn brute_force_nesting() {
        let cfg = BruteForceConfig { points: 1 << 14, training: 30, waves: 4, ..Default::default() };
        let bf = brute_force_history_match(&ToyModel, &ToyModel::space(), &cfg).unwrap();
        let mut expected = 1usize << 14;
        for w in 1..bf.survivors.len() {
            expected = expected.div_ceil(2);
            let (prev, cur) = (&bf.survivors[w - 1], &bf.survivors[w]);
            assert!(cur.len() >= expected);
            let set: std::collections::HashSet<_> = prev.iter().collect();
            assert!(cur.iter().all(|i| set.contains(i)));
        }
        let all: Vec<usize> =
            (0..bf.points.len()).filter(|&i| bf.chain.is_non_implausible(&bf.points[i]).accepted).collect();
        assert_eq!(&all, bf.survivors.last().unwrap());
        let again = brute_force_history_match(&ToyModel, &ToyModel::space(), &cfg).unwrap();
        assert_eq!(again.survivors, bf.survivors);
    }

    struct Quadratic;

    impl SimulatorModel for Quadratic {
        fn kind(&self) -> ModelKind {
            ModelKind::Deterministic
        }
        fn semantics(&self) -> crate::models::OutputSemantics {
            crate::models::OutputSemantics::Distance
        }
        fn simulate(&self, t: &[f64], _k: StreamKey) -> Result<crate::models::Evaluation> {
            Ok(crate::models::Evaluation::plain((t[0] - 0.3).powi(2) + 2.0 * (t[1] - 0.6).powi(2)))
        }
    }

    #[test]
    fn optimisation_contracts() {
        let space = ParameterSpace::uniform_box(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let cfg = OptimisationConfig { particles: 500, waves: 10, ..Default::default() };
        let out = smc_optimisation(&Quadratic, &space, &cfg).unwrap();
        for pair in out.waves.windows(2) {
            assert!(pair[1].cutoff < pair[0].cutoff);
            assert!(pair[1].mean_distance < pair[0].mean_distance);
        }
        assert!(out.simulations > 500 * 10);
        assert!(out.distances.iter().all(|&d| d <= out.waves.last().unwrap().cutoff));
    }

    struct NormalMean {
        ys: Vec<f64>,
    }

    impl LogLikelihood for NormalMean {
        fn log_likelihood(&self, t: &[f64], _k: StreamKey) -> Result<f64> {
            Ok(self.ys.iter().map(|y| -0.5 * (y - t[0]).powi(2) - 0.5 * (2.0 * std::f64::consts::PI).ln()).sum())
        }
    }

    struct Flat;

    impl LogLikelihood for Flat {
        fn log_likelihood(&self, _t: &[f64], _k: StreamKey) -> Result<f64> {
            Ok(-3.0)
        }
    }

    #[test]
    fn anneal_flat_is_one_step() {
        let space = ParameterSpace::uniform_box(&[(0.0, 1.0)]).unwrap();
        let out = bayes_smc_anneal(&Flat, &space, &AnnealConfig { particles: 200, ..Default::default() }).unwrap();
        assert_eq!(out.temperatures, vec![0.0, 1.0]);
    }

    #[test]
    fn anneal_conjugate_posterior() {
        // flat prior on a wide box, unit-variance likelihood: posterior N(ybar, 1/n)
        let ys = vec![0.3, -0.2, 1.1, 0.7, 0.4, 0.0, 0.9, 0.5];
        let n = ys.len() as f64;
        let ybar = ys.iter().sum::<f64>() / n;
        let space = ParameterSpace::uniform_box(&[(-10.0, 10.0)]).unwrap();
        let out = bayes_smc_anneal(&NormalMean { ys }, &space, &AnnealConfig { particles: 2000, ..Default::default() }).unwrap();
        let xs: Vec<f64> = out.particles.iter().map(|t| t[0]).collect();
        let mean = crate::stats::mean(&xs);
        let sd = crate::stats::variance(&xs).sqrt();
        let post_sd = (1.0 / n).sqrt();
        // resampled populations are correlated; take a tenth as the effective size
        let m_eff = xs.len() as f64 / 10.0;
        assert!((mean - ybar).abs() < 3.0 * post_sd / m_eff.sqrt(), "{mean} vs {ybar}");
        assert!((sd - post_sd).abs() < 3.0 * post_sd / (2.0 * m_eff).sqrt(), "{sd} vs {post_sd}");
        assert!(out.temperatures.len() > 2);
    }
}

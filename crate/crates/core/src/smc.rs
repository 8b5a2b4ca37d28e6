//! Sequential Monte Carlo history matching: adaptive cutoffs, indicator
//! reweighting, resampling, MCMC diversification and emulator refits.

use std::collections::HashSet;
use std::sync::Arc;

use log::{info, warn};
use rand::seq::index::sample;
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpEmulator, GpFitConfig, GpTrainingSet};
use crate::implausibility::{Constraint, ImplausibilityMeasure, WaveChain, WaveEmulator, WaveRecord};
use crate::mcmc::{build_proposal, mh_sweep, MapKind, ProposalConfig, SweepDiagnostics};
use crate::models::{Evaluation, ModelKind, SimulatorModel};
use crate::rng::StreamKey;
use crate::space::{DesignScheme, DesignSpec, ParameterSpace};
use crate::stats::quantile_sorted;

#[derive(Clone, Debug, PartialEq)]
pub struct CutoffSelection {
    pub cutoff: f64,
    pub survivors: Vec<bool>,
    pub count: usize,
}

/// Cutoff at the rank `ceil(alpha M)` order statistic; ties at the cutoff
/// all survive. NaN counts as `+inf`.
pub fn select_cutoff(values: &[f64], alpha: f64) -> Result<CutoffSelection> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no implausibility values".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must lie in (0, 1)")));
    }
    let clean: Vec<f64> = values.iter().map(|&v| if v.is_nan() { f64::INFINITY } else { v }).collect();
    let mut sorted = clean.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateImplausibility);
    }
    let rank = ((alpha * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let cutoff = sorted[rank - 1];
    let survivors: Vec<bool> = clean.iter().map(|&v| v <= cutoff).collect();
    let count = survivors.iter().filter(|&&s| s).count();
    Ok(CutoffSelection { cutoff, survivors, count })
}

/// `(sum w)^2 / sum w^2`; exact for 0/1 weights.
pub fn ess(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

pub fn indicator_weights(mask: &[bool]) -> Vec<f64> {
    mask.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect()
}

/// Survivors stay in place; every other slot `i` is refilled with a uniform
/// draw from the survivors using `key.at(i)`.
pub fn reweight_and_resample(particles: &[Vec<f64>], survivors: &[bool], key: StreamKey) -> Result<Vec<Vec<f64>>> {
    if particles.len() != survivors.len() {
        return Err(Error::DimensionMismatch { expected: particles.len(), got: survivors.len() });
    }
    let alive: Vec<usize> = (0..particles.len()).filter(|&i| survivors[i]).collect();
    if alive.is_empty() {
        return Err(Error::NoSurvivors);
    }
    Ok(particles
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if survivors[i] {
                t.clone()
            } else {
                particles[alive[key.at(i as u64).rng().random_range(0..alive.len())]].clone()
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepeatRule {
    /// Target probability of a particle not moving.
    pub c: f64,
    pub r_max: usize,
    pub p_floor: f64,
}

impl Default for RepeatRule {
    fn default() -> Self {
        RepeatRule { c: 0.01, r_max: 100, p_floor: 1e-3 }
    }
}

/// `ceil(log c / log(1 - p_acc))`, capped at `r_max`.
pub fn adaptive_repeats(p_acc: f64, rule: &RepeatRule) -> usize {
    if p_acc >= 1.0 - 1e-12 {
        return 1;
    }
    if p_acc <= rule.p_floor {
        warn!("acceptance {p_acc:.2e} at or below {:.1e}; using {} repeats", rule.p_floor, rule.r_max);
        return rule.r_max;
    }
    let r = (rule.c.ln() / (1.0 - p_acc).ln()).ceil();
    if r > rule.r_max as f64 {
        warn!("repeat count {r} capped at {}", rule.r_max);
        return rule.r_max;
    }
    (r as usize).max(1)
}

fn bit_key(t: &[f64]) -> Vec<u64> {
    t.iter().map(|v| v.to_bits()).collect()
}

/// Uniform draw without replacement; deterministic models drop duplicates
/// first, so the result may be shorter than `n`.
pub fn subsample_training(particles: &[Vec<f64>], n: usize, kind: ModelKind, key: StreamKey) -> Result<Vec<Vec<f64>>> {
    let pool: Vec<&Vec<f64>> = match kind {
        ModelKind::Stochastic => particles.iter().collect(),
        ModelKind::Deterministic => {
            let mut seen = HashSet::new();
            particles.iter().filter(|t| seen.insert(bit_key(t))).collect()
        }
    };
    if kind == ModelKind::Deterministic && pool.len() < 2 {
        return Err(Error::TooFewUnique);
    }
    let take = n.min(pool.len());
    if take < n {
        info!("only {} unique particles for {n} training points", pool.len());
    }
    let mut idx = sample(&mut key.rng(), pool.len(), take).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| pool[i].clone()).collect())
}

pub fn unique_count(particles: &[Vec<f64>]) -> usize {
    particles.iter().map(|t| bit_key(t)).collect::<HashSet<_>>().len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoveConfig {
    pub kernel: MapKind,
    pub kde_subset: usize,
    pub scale: f64,
    pub repeats: RepeatRule,
}

impl Default for MoveConfig {
    fn default() -> Self {
        MoveConfig { kernel: MapKind::Kde, kde_subset: 1000, scale: 1.0, repeats: RepeatRule::default() }
    }
}

impl MoveConfig {
    fn proposal(&self) -> ProposalConfig {
        ProposalConfig { map: self.kernel, subset_size: self.kde_subset, scale: self.scale }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    pub particles: usize,
    pub training: usize,
    pub alpha: f64,
    pub max_waves: usize,
    /// Stop after two consecutive waves with probe acceptance below this.
    pub min_acceptance: f64,
    /// Stop when the cutoff improves by less than this (disabled if unset).
    pub min_cutoff_improvement: Option<f64>,
    pub design: DesignScheme,
    pub measure: ImplausibilityMeasure,
    #[serde(rename = "move")]
    pub moves: MoveConfig,
    pub gp: GpFitConfig,
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 5000,
            training: 50,
            alpha: 0.5,
            max_waves: 9,
            min_acceptance: 0.0,
            min_cutoff_improvement: None,
            design: DesignScheme::SobolQmc,
            measure: ImplausibilityMeasure::lcb(3.0),
            moves: MoveConfig::default(),
            gp: GpFitConfig::default(),
            seed: 1,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if self.training < 2 || self.training > self.particles {
            return bad(format!("training size {} must be in [2, particles={}]", self.training, self.particles));
        }
        let c = self.moves.repeats.c;
        if !(c > 0.0 && c < 1.0) {
            return bad(format!("move target c {c} must lie in (0, 1)"));
        }
        if !(self.moves.scale > 0.0) || self.moves.kde_subset < 2 || self.moves.repeats.r_max == 0 {
            return bad("move scale must be positive, kde_subset at least 2 and r_max at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputQuantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl OutputQuantiles {
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        OutputQuantiles {
            min: s[0],
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveSummary {
    /// Acceptance of the probing sweep, which sets the repeat count.
    pub p_acc: f64,
    pub repeats: usize,
    pub sweeps: SweepDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveSummary {
    pub wave: usize,
    pub cutoff: Option<f64>,
    pub survivors: usize,
    pub survivor_fraction: f64,
    pub ess: f64,
    pub moves: Option<MoveSummary>,
    pub unique_particles: usize,
    pub training_size: usize,
    pub flagged_simulations: usize,
    pub output_quantiles: OutputQuantiles,
    pub simulations: u64,
    pub gp_log_marginal_likelihood: f64,
    pub gp_jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub theta: Vec<f64>,
    pub raw: f64,
    pub output: f64,
    pub flagged: bool,
}

pub struct WaveArtifacts<'a> {
    pub wave: usize,
    pub particles: &'a [Vec<f64>],
    pub training: &'a [TrainingRow],
    pub summary: &'a WaveSummary,
    pub emulator: &'a GpEmulator,
    /// The record this wave added to the chain (absent for wave 0).
    pub record: Option<&'a WaveRecord>,
}

/// Receives each completed wave.
pub trait WaveSink {
    fn wave(&mut self, artifacts: &WaveArtifacts<'_>) -> Result<()>;
}

pub struct NullSink;

impl WaveSink for NullSink {
    fn wave(&mut self, _: &WaveArtifacts<'_>) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "kebab-case")]
pub enum StopReason {
    MaxWaves,
    NoSurvivors,
    DegenerateImplausibility,
    LowAcceptance,
    CutoffStalled,
    TooFewUnique,
    Failed(String),
}

pub struct RunOutcome {
    pub chain: WaveChain,
    pub particles: Vec<Vec<f64>>,
    pub summaries: Vec<WaveSummary>,
    pub emulators: Vec<Arc<GpEmulator>>,
    pub stop: StopReason,
    pub simulations: u64,
}

/// Resampled particles are moved by one probing sweep and then `R_t`
/// further sweeps against `chain`.
pub fn diversify<C: Constraint + ?Sized>(
    particles: Vec<Vec<f64>>,
    constraint: &C,
    space: &ParameterSpace,
    cfg: &MoveConfig,
    key: StreamKey,
) -> Result<(Vec<Vec<f64>>, MoveSummary)> {
    let prop = build_proposal(&particles, space, &cfg.proposal(), key.named("proposal"))?;
    let sweep_key = key.named("sweep");
    let (mut particles, probe) = mh_sweep(&particles, constraint, space, &prop, sweep_key.at(0))?;
    let repeats = adaptive_repeats(probe.p_acc, &cfg.repeats);
    let mut total = probe.clone();
    for s in 1..=repeats {
        let (next, d) = mh_sweep(&particles, constraint, space, &prop, sweep_key.at(s as u64))?;
        particles = next;
        total.merge(&d);
    }
    Ok((particles, MoveSummary { p_acc: probe.p_acc, repeats, sweeps: total }))
}

fn implausibilities(record: &WaveRecord, particles: &[Vec<f64>]) -> Vec<f64> {
    particles.par_iter().map(|t| record.implausibility(t).unwrap_or(f64::INFINITY)).collect()
}

struct Engine<'a, M: SimulatorModel + ?Sized> {
    model: &'a M,
    space: &'a ParameterSpace,
    cfg: &'a SmcConfig,
    root: StreamKey,
    simulations: u64,
}

impl<M: SimulatorModel + ?Sized> Engine<'_, M> {
    fn train(&mut self, thetas: Vec<Vec<f64>>, wave: usize) -> Result<(Vec<TrainingRow>, Arc<GpEmulator>)> {
        let evals: Vec<Evaluation> = self.model.simulate_batch(&thetas, self.root.named("simulate").at(wave as u64))?;
        self.simulations += thetas.len() as u64;
        let rows: Vec<TrainingRow> = thetas
            .into_iter()
            .zip(evals)
            .map(|(theta, e)| TrainingRow { theta, raw: e.raw, output: e.output, flagged: e.flagged })
            .collect();
        let mut set = GpTrainingSet::new(rows.iter().map(|r| r.theta.clone()).collect(), rows.iter().map(|r| r.output).collect())?;
        if self.model.kind() == ModelKind::Deterministic {
            set = set.dedup()?;
        }
        let mut gp_cfg = self.cfg.gp.clone();
        gp_cfg.seed = self.root.named("gp").at(wave as u64).raw();
        let em = GpEmulator::fit(set, &gp_cfg)?;
        Ok((rows, Arc::new(em)))
    }

    fn summary(&self, wave: usize, particles: &[Vec<f64>], rows: &[TrainingRow], em: &GpEmulator) -> WaveSummary {
        let outputs: Vec<f64> = rows.iter().map(|r| r.output).collect();
        WaveSummary {
            wave,
            cutoff: None,
            survivors: particles.len(),
            survivor_fraction: 1.0,
            ess: particles.len() as f64,
            moves: None,
            unique_particles: unique_count(particles),
            training_size: rows.len(),
            flagged_simulations: rows.iter().filter(|r| r.flagged).count(),
            output_quantiles: OutputQuantiles::of(&outputs),
            simulations: self.simulations,
            gp_log_marginal_likelihood: em.diagnostics().log_marginal_likelihood,
            gp_jitter: em.diagnostics().jitter,
        }
    }
}

/// Runs history matching to a stopping rule. Failures after wave 0 end the
/// run cleanly with the chain built so far.
pub fn run<M: SimulatorModel + ?Sized>(
    model: &M,
    space: &ParameterSpace,
    cfg: &SmcConfig,
    sink: &mut dyn WaveSink,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let root = StreamKey::new(cfg.seed);
    let mut eng = Engine { model, space, cfg, root, simulations: 0 };

    let mut particles = space.sample_prior(cfg.particles, root.named("prior"));
    let design = space.initial_design(&DesignSpec { count: cfg.training, scheme: cfg.design, seed: cfg.seed })?;
    let (rows, em) = eng.train(design, 0)?;
    let s0 = eng.summary(0, &particles, &rows, &em);
    sink.wave(&WaveArtifacts { wave: 0, particles: &particles, training: &rows, summary: &s0, emulator: &em, record: None })?;
    info!("wave 0: {} simulations", eng.simulations);

    let mut chain = WaveChain::new(space.clone());
    let mut emulators = vec![em];
    let mut summaries = vec![s0];
    let mut low_acceptance = 0;
    let mut stop = StopReason::MaxWaves;

    for w in 1..=cfg.max_waves {
        let step = wave_step(&mut eng, &mut chain, &mut particles, &emulators, w, sink);
        match step {
            Ok((summary, em)) => {
                let p = summary.moves.as_ref().map_or(1.0, |m| m.p_acc);
                let prev_cut = summaries.last().and_then(|s| s.cutoff);
                let cut = summary.cutoff;
                info!(
                    "wave {w}: cutoff {:.6e} ess {} p_acc {:.3} R {} sims {}",
                    cut.unwrap_or(f64::NAN),
                    summary.ess,
                    p,
                    summary.moves.as_ref().map_or(0, |m| m.repeats),
                    summary.simulations
                );
                summaries.push(summary);
                emulators.push(em);
                low_acceptance = if p < cfg.min_acceptance { low_acceptance + 1 } else { 0 };
                if low_acceptance >= 2 {
                    stop = StopReason::LowAcceptance;
                    break;
                }
                if let (Some(min), Some(a), Some(b)) = (cfg.min_cutoff_improvement, prev_cut, cut) {
                    if a - b < min {
                        stop = StopReason::CutoffStalled;
                        break;
                    }
                }
            }
            Err(e) => {
                stop = match e {
                    Error::NoSurvivors => StopReason::NoSurvivors,
                    Error::DegenerateImplausibility => StopReason::DegenerateImplausibility,
                    Error::TooFewUnique => StopReason::TooFewUnique,
                    other => StopReason::Failed(other.to_string()),
                };
                warn!("stopping at wave {w}: {stop:?}");
                break;
            }
        }
    }
    Ok(RunOutcome { chain, particles, summaries, emulators, stop, simulations: eng.simulations })
}

fn wave_step<M: SimulatorModel + ?Sized>(
    eng: &mut Engine<'_, M>,
    chain: &mut WaveChain,
    particles: &mut Vec<Vec<f64>>,
    emulators: &[Arc<GpEmulator>],
    w: usize,
    sink: &mut dyn WaveSink,
) -> Result<(WaveSummary, Arc<GpEmulator>)> {
    let cfg = eng.cfg;
    let wave_key = eng.root.named("wave").at(w as u64);
    let previous = emulators.last().expect("wave 0 emulator").clone();
    let mut record = WaveRecord { index: w, emulator: WaveEmulator::Gp(previous), measure: cfg.measure.clone(), cutoff: 0.0 };
    let values = implausibilities(&record, particles);
    let sel = select_cutoff(&values, cfg.alpha)?;
    record.cutoff = sel.cutoff;
    let resampled = reweight_and_resample(particles, &sel.survivors, wave_key.named("resample"))?;
    let mut trial = chain.clone();
    trial.push(record)?;
    let (moved, moves) = diversify(resampled, &trial, eng.space, &cfg.moves, wave_key)?;
    let thetas = subsample_training(&moved, cfg.training, eng.model.kind(), wave_key.named("training"))?;
    let (rows, em) = eng.train(thetas, w)?;
    *chain = trial;
    *particles = moved;
    let mut summary = eng.summary(w, particles, &rows, &em);
    summary.cutoff = Some(sel.cutoff);
    summary.survivors = sel.count;
    summary.survivor_fraction = sel.count as f64 / particles.len() as f64;
    summary.ess = ess(&indicator_weights(&sel.survivors));
    summary.moves = Some(moves);
    sink.wave(&WaveArtifacts {
        wave: w,
        particles,
        training: &rows,
        summary: &summary,
        emulator: &em,
        record: chain.waves().last(),
    })?;
    Ok((summary, em))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenWave {
    pub wave: usize,
    pub survivors: usize,
    pub survivor_fraction: f64,
    pub moves: MoveSummary,
}

/// Samples along a fixed wave sequence: at wave `w` particles outside wave
/// `w` are replaced by resampled survivors and the population is moved
/// against the first `w` waves.
pub fn run_frozen(
    chain: &WaveChain,
    initial: Vec<Vec<f64>>,
    moves: &MoveConfig,
    key: StreamKey,
) -> Result<(Vec<Vec<f64>>, Vec<FrozenWave>)> {
    let space = chain.space();
    let mut particles = initial;
    let mut waves = Vec::with_capacity(chain.len());
    for (k, record) in chain.waves().iter().enumerate() {
        let w = k + 1;
        let wave_key = key.named("frozen").at(w as u64);
        let mask: Vec<bool> = particles.par_iter().map(|t| record.admits(t)).collect();
        let count = mask.iter().filter(|&&m| m).count();
        let resampled = reweight_and_resample(&particles, &mask, wave_key.named("resample"))?;
        let (moved, summary) = diversify(resampled, &chain.truncated(w), space, moves, wave_key)?;
        info!("frozen wave {w}: survivors {count} p_acc {:.3} R {}", summary.p_acc, summary.repeats);
        waves.push(FrozenWave { wave: w, survivors: count, survivor_fraction: count as f64 / moved.len() as f64, moves: summary });
        particles = moved;
    }
    Ok((particles, waves))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cutoff_examples() {
        let s = select_cutoff(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap();
        assert_eq!(s.cutoff, 2.0);
        assert_eq!(s.survivors, vec![true, true, false, false]);
        let s = select_cutoff(&[5.0, 5.0, 5.0, 1.0], 0.5).unwrap();
        assert_eq!((s.cutoff, s.count), (5.0, 4));
        assert!(matches!(select_cutoff(&[2.0; 5], 0.5), Err(Error::DegenerateImplausibility)));
        let s = select_cutoff(&[f64::INFINITY, 1.0, f64::NAN, 0.5], 0.5).unwrap();
        assert_eq!((s.cutoff, s.count), (1.0, 2));
    }

    #[test]
    fn cutoff_of_uniforms() {
        let mut rng = StreamKey::new(5).rng();
        let v: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let s = select_cutoff(&v, 0.5).unwrap();
        assert!((s.cutoff - 0.5).abs() < 0.02);
        assert_eq!(s.count, 5000);
    }

    #[test]
    fn repeats() {
        let rule = RepeatRule::default();
        assert_eq!(adaptive_repeats(0.5, &rule), 7);
        assert_eq!(adaptive_repeats(1.0, &rule), 1);
        assert_eq!(adaptive_repeats(1e-4, &rule), 100);
        assert_eq!(adaptive_repeats(0.01, &rule), 100);
    }

    #[test]
    fn resample_cases() {
        let parts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let all = reweight_and_resample(&parts, &[true; 10], StreamKey::new(1)).unwrap();
        assert_eq!(all, parts);
        let mask: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let out = reweight_and_resample(&parts, &mask, StreamKey::new(1)).unwrap();
        assert_eq!(&out[..5], &parts[..5]);
        assert!(out.iter().all(|t| t[0] < 5.0));
        assert!(matches!(reweight_and_resample(&parts, &[false; 10], StreamKey::new(1)), Err(Error::NoSurvivors)));
    }

    #[test]
    fn resample_frequencies_uniform() {
        let parts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let mask = vec![true, false, true, false, true, false, false, false, false, false];
        let mut counts = [0u64; 10];
        let root = StreamKey::new(77);
        let trials = 100_000 / 7;
        for t in 0..trials {
            let out = reweight_and_resample(&parts, &mask, root.at(t)).unwrap();
            for (i, o) in out.iter().enumerate() {
                if !mask[i] {
                    counts[o[0] as usize] += 1;
                }
            }
        }
        let n = (trials * 7) as f64;
        let p = 1.0 / 3.0;
        let se = (n * p * (1.0 - p)).sqrt();
        for i in [0, 2, 4] {
            assert!((counts[i] as f64 - n * p).abs() < 3.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn training_subsample_rules() {
        let distinct: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, 0.5]).collect();
        let t = subsample_training(&distinct, 50, ModelKind::Deterministic, StreamKey::new(1)).unwrap();
        assert_eq!(t.len(), 50);
        assert_eq!(unique_count(&t), 50);
        let few: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 3) as f64]).collect();
        assert_eq!(subsample_training(&few, 50, ModelKind::Deterministic, StreamKey::new(1)).unwrap().len(), 3);
        let s = subsample_training(&few, 50, ModelKind::Stochastic, StreamKey::new(1)).unwrap();
        assert_eq!(s.len(), 50);
        assert!(unique_count(&s) <= 3);
        let one = vec![vec![1.0]; 10];
        assert!(matches!(subsample_training(&one, 5, ModelKind::Deterministic, StreamKey::new(1)), Err(Error::TooFewUnique)));
    }

    proptest! {
        #[test]
        fn indicator_ess_is_survivor_count(mask in prop::collection::vec(any::<bool>(), 1..500)) {
            let k = mask.iter().filter(|&&m| m).count();
            prop_assume!(k > 0);
            prop_assert_eq!(ess(&indicator_weights(&mask)), k as f64);
            let m = mask.len() as f64;
            let normalized: Vec<f64> = indicator_weights(&mask).iter().map(|w| w / m).collect();
            prop_assert!((ess(&normalized) - k as f64).abs() < 1e-9 * k as f64);
        }

        #[test]
        fn resampled_only_survivors(vals in prop::collection::vec(0.0f64..1.0, 2..300), alpha in 0.05f64..0.95, seed in any::<u64>()) {
            let parts: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
            if let Ok(sel) = select_cutoff(&vals, alpha) {
                prop_assert!(sel.count >= (alpha * vals.len() as f64).ceil() as usize);
                let out = reweight_and_resample(&parts, &sel.survivors, StreamKey::new(seed)).unwrap();
                prop_assert_eq!(out.len(), parts.len());
                prop_assert!(out.iter().all(|t| t[0] <= sel.cutoff));
            }
        }

        #[test]
        fn repeats_formula(p in 0.0011f64..0.999, c in 0.001f64..0.5) {
            let rule = RepeatRule { c, ..Default::default() };
            let r = adaptive_repeats(p, &rule);
            let exact = (c.ln() / (1.0 - p).ln()).ceil() as usize;
            prop_assert_eq!(r, exact.clamp(1, 100));
        }
    }
}

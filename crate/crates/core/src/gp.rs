//! Gaussian-process emulator with a squared-exponential ARD kernel.
//!
//! Inputs and outputs are standardized with the training-set mean and
//! standard deviation; the GP has zero mean on the standardized scale and
//! all hyperparameters live there. Hyperparameters maximize the log marginal
//! likelihood over several seeded restarts.

use std::f64::consts::PI;

use byteorder::{ByteOrder, LittleEndian};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, BfgsOptions};
use crate::rng::StreamKey;

/// Training pairs plus the standardization derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct GpTrainingSet {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    input_center: Vec<f64>,
    input_scale: Vec<f64>,
    output_mean: f64,
    output_sd: f64,
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl GpTrainingSet {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        if inputs.len() != outputs.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), got: outputs.len() });
        }
        let p = inputs[0].len();
        if p == 0 {
            return Err(Error::InvalidArgument("zero-dimensional inputs".into()));
        }
        for row in &inputs {
            if row.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("training inputs"));
            }
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training outputs"));
        }
        let mut input_center = Vec::with_capacity(p);
        let mut input_scale = Vec::with_capacity(p);
        for k in 0..p {
            let (m, s) = mean_sd(inputs.iter().map(|r| r[k]));
            input_center.push(m);
            input_scale.push(if s > 0.0 { s } else { 1.0 });
        }
        let (output_mean, sd) = mean_sd(outputs.iter().copied());
        let output_sd = if sd > 0.0 { sd } else { 1.0 };
        Ok(GpTrainingSet { inputs, outputs, input_center, input_scale, output_mean, output_sd })
    }

    /// Drops repeated input rows, keeping the first occurrence.
    pub fn dedup(self) -> Result<Self> {
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.inputs.len());
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for (x, y) in self.inputs.into_iter().zip(self.outputs) {
            if !inputs.iter().any(|r| r == &x) {
                inputs.push(x);
                outputs.push(y);
            }
        }
        GpTrainingSet::new(inputs, outputs)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn output_mean(&self) -> f64 {
        self.output_mean
    }

    pub fn output_sd(&self) -> f64 {
        self.output_sd
    }

    pub fn input_center(&self) -> &[f64] {
        &self.input_center
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    fn standardize_input(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..x.len() {
            out[k] = (x[k] - self.input_center[k]) / self.input_scale[k];
        }
    }

    pub fn standardized_inputs(&self) -> Vec<Vec<f64>> {
        self.inputs
            .iter()
            .map(|x| {
                let mut z = vec![0.0; x.len()];
                self.standardize_input(x, &mut z);
                z
            })
            .collect()
    }

    pub fn standardized_outputs(&self) -> Vec<f64> {
        self.outputs.iter().map(|y| (y - self.output_mean) / self.output_sd).collect()
    }
}

/// Kernel hyperparameters on the standardized scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// Noise variance held at the given value (0 for deterministic models).
    Fixed(f64),
    /// Noise variance estimated with the other hyperparameters.
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpFitConfig {
    pub restarts: usize,
    pub noise: NoiseModel,
    /// Include the noise variance in the predictive sd.
    pub predict_noisy: bool,
    /// Starting jitter, relative to the signal variance.
    pub base_jitter: f64,
    /// Largest jitter tried before giving up, relative to the signal variance.
    pub max_jitter: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        GpFitConfig {
            restarts: 5,
            noise: NoiseModel::Fixed(0.0),
            predict_noisy: false,
            base_jitter: 1e-8,
            max_jitter: 1e-4,
            max_iters: 150,
            seed: 0,
        }
    }
}

impl GpFitConfig {
    pub fn stochastic() -> Self {
        GpFitConfig { noise: NoiseModel::Learned, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpDiagnostics {
    pub log_marginal_likelihood: f64,
    /// Relative jitter used in the final factorization.
    pub jitter: f64,
    pub jitter_escalated: bool,
    pub restarts_converged: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub sd: f64,
}

/// A fitted, immutable emulator.
#[derive(Clone, Debug)]
pub struct GpEmulator {
    training: GpTrainingSet,
    hyper: Hyperparameters,
    jitter: f64,
    predict_noisy: bool,
    /// Standardized training inputs, row-major `n x p`.
    xs: Vec<f64>,
    /// Lower Cholesky factor, row-major `n x n`.
    chol: Vec<f64>,
    alpha: Vec<f64>,
    diagnostics: GpDiagnostics,
}

struct Problem<'a> {
    xs: &'a [Vec<f64>],
    y: &'a DVector<f64>,
    /// Per-dimension squared differences, each row-major `n x n`.
    d2: Vec<Vec<f64>>,
}

impl<'a> Problem<'a> {
    fn new(xs: &'a [Vec<f64>], y: &'a DVector<f64>) -> Self {
        let n = xs.len();
        let p = xs[0].len();
        let d2 = (0..p)
            .map(|k| {
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] = (xs[i][k] - xs[j][k]).powi(2);
                    }
                }
                m
            })
            .collect();
        Problem { xs, y, d2 }
    }

    fn n(&self) -> usize {
        self.xs.len()
    }

    /// Squared-exponential part of the kernel matrix, row-major.
    fn kse(&self, h: &Hyperparameters) -> Vec<f64> {
        let n = self.n();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut r = 0.0;
                for (d, l) in self.d2.iter().zip(&h.lengthscales) {
                    r += d[i * n + j] / (l * l);
                }
                let v = h.signal_variance * (-0.5 * r).exp();
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }

    fn factor(&self, kse: &[f64], h: &Hyperparameters, jitter_rel: f64) -> Option<Cholesky<f64, Dyn>> {
        let n = self.n();
        let diag = h.noise_variance + jitter_rel * h.signal_variance;
        let k = DMatrix::from_fn(n, n, |i, j| kse[i * n + j] + if i == j { diag } else { 0.0 });
        Cholesky::new(k)
    }

    /// Log marginal likelihood and its gradient with respect to
    /// `(log sf2, log l_1..p, log sn2)`.
    fn lml_and_grad(&self, h: &Hyperparameters, jitter_rel: f64) -> Option<(f64, Vec<f64>)> {
        let n = self.n();
        let p = h.lengthscales.len();
        let kse = self.kse(h);
        let chol = self.factor(&kse, h, jitter_rel)?;
        let alpha = chol.solve(self.y);
        let l = chol.l_dirty();
        let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        let lml = -0.5 * self.y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();
        if !lml.is_finite() {
            return None;
        }
        let kinv = chol.inverse();
        let mut g_sf = 0.0;
        let mut g_l = vec![0.0; p];
        let mut g_sn = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w = alpha[i] * alpha[j] - kinv[(i, j)];
                let kv = kse[i * n + j];
                g_sf += w * kv;
                for k in 0..p {
                    g_l[k] += w * kv * self.d2[k][i * n + j] / (h.lengthscales[k] * h.lengthscales[k]);
                }
                if i == j {
                    g_sf += w * jitter_rel * h.signal_variance;
                    g_sn += w * h.noise_variance;
                }
            }
        }
        let mut grad = Vec::with_capacity(p + 2);
        grad.push(0.5 * g_sf);
        grad.extend(g_l.iter().map(|g| 0.5 * g));
        grad.push(0.5 * g_sn);
        Some((lml, grad))
    }
}

fn escalate(jitter: f64, max: f64) -> f64 {
    if jitter <= 0.0 {
        1e-12f64.min(max)
    } else {
        (jitter * 10.0).min(max)
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Box in log-hyperparameter space mapped smoothly from the real line.
struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn to_phi(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &ui)| self.lo[i] + (self.hi[i] - self.lo[i]) * sigmoid(ui))
            .collect()
    }

    fn dphi_du(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &ui)| {
                let s = sigmoid(ui);
                (self.hi[i] - self.lo[i]) * s * (1.0 - s)
            })
            .collect()
    }

    fn to_u(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter()
            .enumerate()
            .map(|(i, &f)| {
                let t = ((f - self.lo[i]) / (self.hi[i] - self.lo[i])).clamp(1e-9, 1.0 - 1e-9);
                (t / (1.0 - t)).ln()
            })
            .collect()
    }
}

/// `phi = (log sf2, log l.., log sn2)` to hyperparameters.
fn hyper_from_phi(phi: &[f64], noise: NoiseModel) -> Hyperparameters {
    let p = phi.len() - 2;
    Hyperparameters {
        signal_variance: phi[0].exp(),
        lengthscales: phi[1..=p].iter().map(|v| v.exp()).collect(),
        noise_variance: match noise {
            NoiseModel::Fixed(v) => v,
            NoiseModel::Learned => phi[p + 1].exp(),
        },
    }
}

fn standardized_ranges(xs: &[Vec<f64>]) -> Vec<f64> {
    let p = xs[0].len();
    (0..p)
        .map(|k| {
            let lo = xs.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let hi = xs.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        })
        .collect()
}

impl GpEmulator {
    pub fn fit(training: GpTrainingSet, config: &GpFitConfig) -> Result<Self> {
        if training.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "at least 2 training points required, got {}",
                training.len()
            )));
        }
        if let NoiseModel::Fixed(v) = config.noise {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("noise variance {v} must be >= 0")));
            }
        }
        let xs = training.standardized_inputs();
        let y = DVector::from_vec(training.standardized_outputs());
        let problem = Problem::new(&xs, &y);
        let p = training.dim();
        let ranges = standardized_ranges(&xs);

        let mut lo = vec![1e-6f64.ln()];
        let mut hi = vec![1e4f64.ln()];
        for r in &ranges {
            lo.push((0.01 * r).ln());
            hi.push((100.0 * r).ln());
        }
        lo.push(1e-8f64.ln());
        hi.push(10f64.ln());
        let bounds = Bounds { lo, hi };
        let learned = matches!(config.noise, NoiseModel::Learned);
        let n_free = if learned { p + 2 } else { p + 1 };

        let root = StreamKey::new(config.seed).named("gp-restarts");
        let starts: Vec<Vec<f64>> = (0..config.restarts.max(1))
            .map(|r| {
                let mut rng = root.at(r as u64).rng();
                let mut log_unif = |a: f64, b: f64| a.ln() + rng.random::<f64>() * (b.ln() - a.ln());
                let mut phi = vec![log_unif(0.1, 10.0)];
                for rk in &ranges {
                    phi.push(log_unif(0.05, 5.0) + rk.ln());
                }
                phi.push(log_unif(1e-6, 1.0));
                phi
            })
            .collect();

        let opts = BfgsOptions { max_iters: config.max_iters, grad_tol: 1e-5, f_tol: 1e-10, max_step: 1.0 };
        let mut jitter_rel = config.base_jitter;
        let mut escalated = false;
        loop {
            let results: Vec<optim::Minimum> = starts
                .par_iter()
                .map(|phi0| {
                    let u0 = bounds.to_u(phi0);
                    let objective = |u_free: &[f64]| {
                        let mut u = u0.clone();
                        u[..n_free].copy_from_slice(u_free);
                        let phi = bounds.to_phi(&u);
                        let h = hyper_from_phi(&phi, config.noise);
                        match problem.lml_and_grad(&h, jitter_rel) {
                            Some((lml, g)) => {
                                let d = bounds.dphi_du(&u);
                                let grad = (0..n_free).map(|i| -g[i] * d[i]).collect();
                                (-lml, grad)
                            }
                            None => (f64::INFINITY, vec![0.0; n_free]),
                        }
                    };
                    let mut m = optim::minimize(objective, &u0[..n_free], opts);
                    let mut u = u0.clone();
                    u[..n_free].copy_from_slice(&m.x);
                    m.x = u;
                    m
                })
                .collect();
            let converged = results.iter().filter(|m| m.converged).count();
            let best = results
                .iter()
                .filter(|m| m.value.is_finite())
                .min_by(|a, b| a.value.total_cmp(&b.value));
            if let Some(best) = best {
                let hyper = hyper_from_phi(&bounds.to_phi(&best.x), config.noise);
                let mut em = GpEmulator::factorize(training, hyper, jitter_rel, config.max_jitter, config.predict_noisy)?;
                em.diagnostics.jitter_escalated |= escalated;
                em.diagnostics.restarts_converged = converged;
                return Ok(em);
            }
            if jitter_rel >= config.max_jitter {
                return Err(Error::Cholesky { jitter: jitter_rel, condition: f64::INFINITY });
            }
            jitter_rel = escalate(jitter_rel, config.max_jitter);
            escalated = true;
        }
    }

    /// Builds an emulator at fixed hyperparameters (no optimization).
    pub fn with_hyperparameters(
        training: GpTrainingSet,
        hyper: Hyperparameters,
        config: &GpFitConfig,
    ) -> Result<Self> {
        if hyper.lengthscales.len() != training.dim() {
            return Err(Error::DimensionMismatch { expected: training.dim(), got: hyper.lengthscales.len() });
        }
        let valid = hyper.signal_variance > 0.0
            && hyper.signal_variance.is_finite()
            && hyper.noise_variance >= 0.0
            && hyper.noise_variance.is_finite()
            && hyper.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite());
        if !valid {
            return Err(Error::InvalidArgument(format!("invalid hyperparameters {hyper:?}")));
        }
        GpEmulator::factorize(training, hyper, config.base_jitter, config.max_jitter, config.predict_noisy)
    }

    fn factorize(
        training: GpTrainingSet,
        hyper: Hyperparameters,
        base_jitter: f64,
        max_jitter: f64,
        predict_noisy: bool,
    ) -> Result<Self> {
        let sx = training.standardized_inputs();
        let y = DVector::from_vec(training.standardized_outputs());
        let problem = Problem::new(&sx, &y);
        let kse = problem.kse(&hyper);
        let mut jitter = base_jitter;
        let mut escalated = false;
        let chol = loop {
            if let Some(c) = problem.factor(&kse, &hyper, jitter) {
                break c;
            }
            if jitter >= max_jitter {
                let diag_max = hyper.signal_variance + hyper.noise_variance;
                let diag_min = hyper.noise_variance + jitter * hyper.signal_variance;
                return Err(Error::Cholesky { jitter, condition: diag_max / diag_min.max(f64::MIN_POSITIVE) });
            }
            jitter = escalate(jitter, max_jitter);
            escalated = true;
        };
        let n = training.len();
        let alpha = chol.solve(&y);
        let l = chol.l();
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                flat[i * n + j] = l[(i, j)];
            }
        }
        let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();
        let xs = sx.into_iter().flatten().collect();
        Ok(GpEmulator {
            training,
            hyper,
            jitter,
            predict_noisy,
            xs,
            chol: flat,
            alpha: alpha.as_slice().to_vec(),
            diagnostics: GpDiagnostics {
                log_marginal_likelihood: lml,
                jitter,
                jitter_escalated: escalated,
                restarts_converged: 0,
            },
        })
    }

    pub fn training(&self) -> &GpTrainingSet {
        &self.training
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn diagnostics(&self) -> &GpDiagnostics {
        &self.diagnostics
    }

    pub fn predict_noisy(&self) -> bool {
        self.predict_noisy
    }

    pub fn dim(&self) -> usize {
        self.training.dim()
    }

    /// Lower Cholesky factor of the (jittered) training covariance.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        let n = self.training.len();
        DMatrix::from_fn(n, n, |i, j| self.chol[i * n + j])
    }

    pub fn predict(&self, theta: &[f64]) -> Prediction {
        let n = self.training.len();
        let p = self.dim();
        let mut z = [0.0f64; 16];
        let mut zv;
        let z: &mut [f64] = if p <= 16 {
            &mut z[..p]
        } else {
            zv = vec![0.0; p];
            &mut zv
        };
        self.training.standardize_input(theta, z);
        let inv_l2: Vec<f64> = self.hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let mut v = vec![0.0; n];
        let mut mean = 0.0;
        for i in 0..n {
            let row = &self.xs[i * p..(i + 1) * p];
            let mut r = 0.0;
            for k in 0..p {
                let d = z[k] - row[k];
                r += d * d * inv_l2[k];
            }
            let ks = self.hyper.signal_variance * (-0.5 * r).exp();
            mean += ks * self.alpha[i];
            v[i] = ks;
        }
        // forward substitution L v = k*
        for i in 0..n {
            let row = &self.chol[i * n..i * n + i];
            let mut acc = v[i];
            for (lij, vj) in row.iter().zip(&v[..i]) {
                acc -= lij * vj;
            }
            v[i] = acc / self.chol[i * n + i];
        }
        let mut var = self.hyper.signal_variance - v.iter().map(|x| x * x).sum::<f64>();
        if self.predict_noisy {
            var += self.hyper.noise_variance;
        }
        let var = if var.is_nan() { 0.0 } else { var.max(0.0) };
        Prediction {
            mean: self.training.output_mean + self.training.output_sd * mean,
            sd: self.training.output_sd * var.sqrt(),
        }
    }

    pub fn predict_batch(&self, thetas: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        thetas.par_iter().map(|t| {
            let pr = self.predict(t);
            (pr.mean, pr.sd)
        }).unzip()
    }
}

const MAGIC: &[u8; 4] = b"HMGP";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 8 * 3;
const MAX_POINTS: usize = 1 << 20;
const MAX_DIM: usize = 1024;

impl GpEmulator {
    /// Versioned little-endian encoding of hyperparameters and training set.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.training.len();
        let p = self.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * (p + n * p + n));
        out.extend_from_slice(MAGIC);
        let mut b2 = [0u8; 2];
        LittleEndian::write_u16(&mut b2, VERSION);
        out.extend_from_slice(&b2);
        LittleEndian::write_u16(&mut b2, u16::from(self.predict_noisy));
        out.extend_from_slice(&b2);
        let mut b4 = [0u8; 4];
        LittleEndian::write_u32(&mut b4, n as u32);
        out.extend_from_slice(&b4);
        LittleEndian::write_u32(&mut b4, p as u32);
        out.extend_from_slice(&b4);
        let mut push = |v: f64| {
            let mut b8 = [0u8; 8];
            LittleEndian::write_f64(&mut b8, v);
            out.extend_from_slice(&b8);
        };
        push(self.hyper.signal_variance);
        push(self.hyper.noise_variance);
        push(self.jitter);
        for &l in &self.hyper.lengthscales {
            push(l);
        }
        for row in self.training.inputs() {
            for &x in row {
                push(x);
            }
        }
        for &y in self.training.outputs() {
            push(y);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("emulator: {m}"));
        if bytes.len() < HEADER_LEN {
            return Err(fmt("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = LittleEndian::read_u16(&bytes[4..6]);
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let flags = LittleEndian::read_u16(&bytes[6..8]);
        if flags > 1 {
            return Err(fmt("unknown flags"));
        }
        let n = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let p = LittleEndian::read_u32(&bytes[12..16]) as usize;
        if n == 0 || p == 0 || n > MAX_POINTS || p > MAX_DIM {
            return Err(fmt(&format!("bad sizes n={n}, p={p}")));
        }
        let expected = HEADER_LEN + 8 * (p + n * p + n);
        if bytes.len() != expected {
            return Err(fmt(&format!("length {} != expected {expected}", bytes.len())));
        }
        let mut off = 16;
        let mut next = || {
            let v = LittleEndian::read_f64(&bytes[off..off + 8]);
            off += 8;
            v
        };
        let signal_variance = next();
        let noise_variance = next();
        let jitter = next();
        let lengthscales: Vec<f64> = (0..p).map(|_| next()).collect();
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| next()).collect()).collect();
        let outputs: Vec<f64> = (0..n).map(|_| next()).collect();
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(fmt("bad jitter"));
        }
        let training = GpTrainingSet::new(inputs, outputs)?;
        let config = GpFitConfig {
            predict_noisy: flags == 1,
            base_jitter: jitter,
            max_jitter: jitter,
            ..Default::default()
        };
        GpEmulator::with_hyperparameters(
            training,
            Hyperparameters { signal_variance, lengthscales, noise_variance },
            &config,
        )
    }
}

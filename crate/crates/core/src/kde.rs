//! Per-dimension Epanechnikov kernel density estimates and the marginal map
//! to approximately standard normal coordinates.

use rand::seq::index::sample;
use rand::RngExt;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{StreamKey, StreamRng};
use crate::space::ParameterSpace;
use crate::stats::{norm_cdf, norm_inv, norm_log_pdf, quantile_sorted};

/// CDF clamp used before the normal quantile.
pub const CDF_EPS: f64 = 1e-12;
pub const DEFAULT_SUBSET: usize = 1000;

#[inline]
fn kernel(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

#[inline]
fn kernel_cdf(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        0.5 + 0.75 * u - 0.25 * u * u * u
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Support {
    Unbounded,
    Bounded(f64, f64),
}

#[derive(Clone, Debug)]
pub struct MarginalKde {
    points: Vec<f64>,
    /// half-width of the kernel support
    bandwidth: f64,
    support: Support,
    /// sorted kernel centres, including reflections near bounded edges
    centers: Vec<f64>,
    offset: f64,
}

impl MarginalKde {
    pub fn new(mut points: Vec<f64>, bandwidth: f64, support: Support) -> Result<Self> {
        if points.is_empty() || points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kde points"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth {bandwidth}")));
        }
        points.sort_by(f64::total_cmp);
        let mut centers = points.clone();
        if let Support::Bounded(lo, hi) = support {
            if !(lo < hi) || points[0] < lo || points[points.len() - 1] > hi {
                return Err(Error::InvalidArgument("kde points outside support".into()));
            }
            for &x in &points {
                if x < lo + bandwidth {
                    centers.push(2.0 * lo - x);
                }
                if x > hi - bandwidth {
                    centers.push(2.0 * hi - x);
                }
            }
            centers.sort_by(f64::total_cmp);
        }
        let mut kde = MarginalKde { points, bandwidth, support, centers, offset: 0.0 };
        if let Support::Bounded(lo, _) = support {
            kde.offset = kde.raw_cdf(lo);
        }
        Ok(kde)
    }

    /// Silverman's rule, expressed as the half-width of a unit-variance
    /// Epanechnikov kernel. Capped at half the support width when bounded.
    pub fn silverman(points: Vec<f64>, support: Support, dim: usize) -> Result<Self> {
        let mut sorted = points.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
            return Err(Error::DegenerateMarginal(dim));
        }
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let sd = (sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let mut h = 5f64.sqrt() * 0.9 * spread * n.powf(-0.2);
        if let Support::Bounded(lo, hi) = support {
            h = h.min(0.5 * (hi - lo));
        }
        MarginalKde::new(points, h, support)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    fn window(&self, x: f64) -> (usize, usize) {
        let lo = self.centers.partition_point(|&c| c <= x - self.bandwidth);
        let hi = self.centers.partition_point(|&c| c < x + self.bandwidth);
        (lo, hi)
    }

    fn raw_cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let partial: f64 = self.centers[lo..hi].iter().map(|&c| kernel_cdf((x - c) / self.bandwidth)).sum();
        (lo as f64 + partial) / self.points.len() as f64
    }

    pub fn density(&self, x: f64) -> f64 {
        if let Support::Bounded(lo, hi) = self.support {
            if x < lo || x > hi {
                return 0.0;
            }
        }
        let (lo, hi) = self.window(x);
        let s: f64 = self.centers[lo..hi].iter().map(|&c| kernel((x - c) / self.bandwidth)).sum();
        s / (self.points.len() as f64 * self.bandwidth)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.support {
            Support::Bounded(lo, _) if x <= lo => 0.0,
            Support::Bounded(_, hi) if x >= hi => 1.0,
            _ => (self.raw_cdf(x) - self.offset).clamp(0.0, 1.0),
        }
    }

    fn bracket(&self) -> (f64, f64) {
        match self.support {
            Support::Bounded(lo, hi) => (lo, hi),
            Support::Unbounded => {
                (self.points[0] - self.bandwidth, self.points[self.points.len() - 1] + self.bandwidth)
            }
        }
    }

    /// Inverse CDF by safeguarded Newton iteration inside a bisection bracket.
    pub fn quantile(&self, u: f64, dim: usize) -> Result<f64> {
        let (mut a, mut b) = self.bracket();
        if u <= 0.0 {
            return Ok(a);
        }
        if u >= 1.0 {
            return Ok(b);
        }
        let mut x = 0.5 * (a + b);
        for _ in 0..300 {
            let r = self.cdf(x) - u;
            if r.abs() <= 1e-13 {
                return Ok(x);
            }
            if r > 0.0 {
                b = x;
            } else {
                a = x;
            }
            if b - a <= 1e-14 * (1.0 + x.abs()) {
                return Ok(x);
            }
            let f = self.density(x);
            let newton = x - r / f;
            x = if f > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        }
        if (self.cdf(x) - u).abs() <= 1e-9 {
            Ok(x)
        } else {
            Err(Error::QuantileInversion(dim))
        }
    }

    /// Draw from the estimate: a random centre plus kernel noise, reflected
    /// back into a bounded support.
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        let c = self.points[rng.random_range(0..self.points.len())];
        let mut e = || rng.random_range(-1.0..1.0f64);
        let (u1, u2, u3) = (e(), e(), e());
        let k = if u3.abs() >= u2.abs() && u3.abs() >= u1.abs() { u2 } else { u3 };
        let x = c + self.bandwidth * k;
        match self.support {
            Support::Bounded(lo, _) if x < lo => 2.0 * lo - x,
            Support::Bounded(_, hi) if x > hi => 2.0 * hi - x,
            _ => x,
        }
    }
}

/// Product of marginal kdes with the map `z_k = Phi^-1(F_k(theta_k))`.
#[derive(Clone, Debug)]
pub struct MarginalTransform {
    kdes: Vec<MarginalKde>,
}

impl MarginalTransform {
    pub fn from_kdes(kdes: Vec<MarginalKde>) -> Self {
        MarginalTransform { kdes }
    }

    /// Fit one kde per dimension on a seeded random subset of the particles.
    pub fn fit(particles: &[Vec<f64>], space: &ParameterSpace, subset_size: usize, key: StreamKey) -> Result<Self> {
        let m = particles.len();
        let p = space.dim();
        if let Some(bad) = particles.iter().find(|t| t.len() != p) {
            return Err(Error::DimensionMismatch { expected: p, got: bad.len() });
        }
        let take = subset_size.min(m);
        if take < 2 {
            return Err(Error::DegenerateMarginal(0));
        }
        let idx: Vec<usize> = if take == m {
            (0..m).collect()
        } else {
            let mut v = sample(&mut key.rng(), m, take).into_vec();
            v.sort_unstable();
            v
        };
        let kdes = (0..p)
            .map(|k| {
                let (lo, hi) = space.bounds(k);
                let support = if lo.is_finite() && hi.is_finite() {
                    Support::Bounded(lo, hi)
                } else {
                    Support::Unbounded
                };
                MarginalKde::silverman(idx.iter().map(|&i| particles[i][k]).collect(), support, k)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MarginalTransform { kdes })
    }

    pub fn dim(&self) -> usize {
        self.kdes.len()
    }

    pub fn kdes(&self) -> &[MarginalKde] {
        &self.kdes
    }

    pub fn to_normal(&self, theta: &[f64]) -> Vec<f64> {
        self.kdes
            .iter()
            .zip(theta)
            .map(|(k, &x)| norm_inv(k.cdf(x).clamp(CDF_EPS, 1.0 - CDF_EPS)))
            .collect()
    }

    pub fn from_normal(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.kdes.iter().zip(z).enumerate().map(|(d, (k, &zk))| k.quantile(norm_cdf(zk), d)).collect()
    }

    /// `sum log f_k(theta_k) - sum log phi(z_k)`, the log Jacobian of the map.
    pub fn log_density_normal_coords(&self, theta: &[f64], z: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((k, &x), &zk) in self.kdes.iter().zip(theta).zip(z) {
            let f = k.density(x);
            if f <= 0.0 {
                return f64::NEG_INFINITY;
            }
            s += f.ln() - norm_log_pdf(zk);
        }
        s
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.kdes.iter().map(|k| k.sample(rng)).collect()
    }
}

//! Dense BFGS with a backtracking Armijo line search, for the handful of
//! hyperparameters of an emulator.

#[derive(Clone, Copy, Debug)]
pub struct BfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    /// Largest move per iteration in the max norm.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iters: 200, grad_tol: 1e-6, f_tol: 1e-12, max_step: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the value and gradient. A non-finite value
/// marks an infeasible point and makes the line search backtrack.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return Minimum { x, value: f64::INFINITY, iterations: 0, converged: false };
    }
    // inverse Hessian approximation, row-major
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iters {
        iterations = it + 1;
        let gnorm = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if gnorm < opts.grad_tol {
            converged = true;
            break;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&d, &g);
        if slope >= 0.0 {
            // not a descent direction; restart from steepest descent
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let dmax = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut step = if dmax > opts.max_step { opts.max_step / dmax } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let improvement = fx - fn_;
        x = xn;
        g = gn;
        fx = fn_;
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += (1.0 + yhy * rho) * rho * s[i] * s[j]
                        - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        if improvement.abs() <= opts.f_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }
    Minimum { x, value: fx, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let m = minimize(f, &[-1.2, 1.0], BfgsOptions { max_iters: 500, ..Default::default() });
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // minimum of (x-2)^2 but x > 1.5 is infeasible
        let f = |x: &[f64]| {
            if x[0] > 1.5 {
                (f64::INFINITY, vec![0.0])
            } else {
                ((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)])
            }
        };
        let m = minimize(f, &[0.0], BfgsOptions::default());
        assert!(m.x[0] <= 1.5 && m.x[0] > 1.4);
    }
}

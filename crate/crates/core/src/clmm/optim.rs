//! BFGS with central-difference gradients and Armijo backtracking.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when `max |g| <= gtol * (1 + |f|)`.
    pub gtol: f64,
    /// Looser bound accepted when the line search can no longer make progress
    /// (numerical-gradient noise floor).
    pub stall_gtol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Largest allowed coordinate change per iteration.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            gtol: 1e-8,
            stall_gtol: 1e-5,
            fd_step: 1e-6,
            max_step: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Central differences with step `rel * max(1, |x_k|)`. Non-finite objective
/// values propagate as NaN gradient entries.
pub fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], rel: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = rel * x[k].abs().max(1.0);
            work[k] = x[k] + h;
            let fp = f(&work);
            work[k] = x[k] - h;
            let fm = f(&work);
            work[k] = x[k];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimize `f`. Non-finite values are treated as infeasible points.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    let mut evaluations = 1;
    let mut g = DVector::from_vec(numerical_gradient(&f, x.as_slice(), opts.fd_step));
    evaluations += 2 * n;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut converged = false;
    let mut iterations = 0;

    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BfgsResult {
            x: x.as_slice().to_vec(),
            f: fx,
            grad: g.as_slice().to_vec(),
            iterations,
            evaluations,
            converged,
        };
    }

    while iterations < opts.max_iter {
        let gmax = max_abs(g.as_slice());
        if gmax <= opts.gtol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut p = -(&h_inv * &g);
        let mut slope = g.dot(&p);
        if slope >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            p = -g.clone();
            slope = g.dot(&p);
        }
        let pmax = p.amax();
        if pmax > opts.max_step {
            p *= opts.max_step / pmax;
            slope = g.dot(&p);
        }

        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let cand = &x + &p * alpha;
            let fc = f(cand.as_slice());
            evaluations += 1;
            if fc.is_finite() && fc <= fx + 1e-4 * alpha * slope {
                next = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = next else {
            if !fresh {
                h_inv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            converged = gmax <= opts.stall_gtol * (1.0 + fx.abs());
            break;
        };
        let g_new = DVector::from_vec(numerical_gradient(&f, x_new.as_slice(), opts.fd_step));
        evaluations += 2 * n;
        if g_new.iter().any(|v| !v.is_finite()) {
            break;
        }
        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if fresh {
                // Shanno scaling of the initial inverse Hessian
                h_inv *= sy / yv.dot(&yv);
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &yv;
            let yhy = yv.dot(&hy);
            h_inv += (&s * s.transpose()) * (rho * (1.0 + rho * yhy))
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        let small_change = (fx - f_new).abs() <= 1e-14 * (1.0 + fx.abs());
        x = x_new;
        fx = f_new;
        g = g_new;
        if small_change && max_abs(g.as_slice()) <= opts.stall_gtol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }
    BfgsResult {
        x: x.as_slice().to_vec(),
        f: fx,
        grad: g.as_slice().to_vec(),
        iterations,
        evaluations,
        converged,
    }
}

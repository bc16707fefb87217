//! Fixed-effects cumulative link model fitted by Newton-Raphson.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::likelihood::obs_terms;
use super::{empirical_thresholds, require_two_categories, varying_columns};
use crate::data::GroupedOrdinalDataset;
use crate::error::{OmerfError, Result};
use crate::link::ThresholdVector;

const MAX_ITER: usize = 100;
const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClmFit {
    pub theta: ThresholdVector,
    pub beta: Vec<f64>,
    pub feature_names: Vec<String>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the gradient in the optimization coordinates.
    pub grad_norm: f64,
    /// Some standardized coefficient exceeded 30 in absolute value.
    pub separation: bool,
}

impl ClmFit {
    pub fn latent(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.beta.len() {
            return Err(OmerfError::dim(format!(
                "model has {} coefficients, data has {} columns",
                self.beta.len(),
                x.ncols()
            )));
        }
        Ok((0..x.nrows())
            .map(|r| self.beta.iter().enumerate().map(|(k, b)| b * x[(r, k)]).sum())
            .collect())
    }
}

struct NewtonTerms {
    loglik: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// Log-likelihood, gradient and Hessian in `u = (theta_1, log gaps, beta_free)`.
fn terms(
    data: &GroupedOrdinalDataset,
    free: &[usize],
    u: &[f64],
    n_theta: usize,
) -> (NewtonTerms, ThresholdVector, Vec<f64>) {
    let theta = ThresholdVector::from_unconstrained(&u[..n_theta]);
    let mut beta = vec![0.0; data.n_features()];
    for (slot, &k) in free.iter().enumerate() {
        beta[k] = u[n_theta + slot];
    }
    let x = data.x();
    let n_par = n_theta + free.len();
    let c = n_theta as u32 + 1;
    // natural-parameter gradient and Hessian over (theta, beta_free)
    let mut g = DVector::zeros(n_par);
    let mut h = DMatrix::zeros(n_par, n_par);
    let mut ll = 0.0;
    let mut xs = vec![0.0; free.len()];
    for r in 0..data.n_rows() {
        let y = data.y()[r];
        for (slot, &k) in free.iter().enumerate() {
            xs[slot] = x[(r, k)];
        }
        let lambda: f64 = free.iter().zip(&xs).map(|(&k, v)| beta[k] * v).sum();
        let t = obs_terms(&theta, y, lambda);
        ll += t.logp;
        let up = (y < c).then(|| y as usize - 1);
        let lo = (y > 1).then(|| y as usize - 2);
        if let Some(a) = up {
            g[a] += t.d_upper;
            h[(a, a)] += t.d2_upper;
        }
        if let Some(b) = lo {
            g[b] += t.d_lower;
            h[(b, b)] += t.d2_lower;
        }
        if let (Some(a), Some(b)) = (up, lo) {
            h[(a, b)] += t.d2_cross;
            h[(b, a)] += t.d2_cross;
        }
        let dl = t.d_lambda();
        let d2l = t.d2_lambda();
        let up_l = -(t.d2_upper + t.d2_cross);
        let lo_l = -(t.d2_cross + t.d2_lower);
        for s in 0..free.len() {
            let ps = n_theta + s;
            g[ps] += dl * xs[s];
            for s2 in 0..=s {
                h[(ps, n_theta + s2)] += d2l * xs[s] * xs[s2];
            }
            if let Some(a) = up {
                h[(a, ps)] += up_l * xs[s];
                h[(ps, a)] += up_l * xs[s];
            }
            if let Some(b) = lo {
                h[(b, ps)] += lo_l * xs[s];
                h[(ps, b)] += lo_l * xs[s];
            }
        }
    }
    for s in 0..free.len() {
        for s2 in 0..s {
            h[(n_theta + s2, n_theta + s)] = h[(n_theta + s, n_theta + s2)];
        }
    }

    // chain rule through theta_c = u_0 + sum_{k=1..c} exp(u_k)
    let mut jac = DMatrix::identity(n_par, n_par);
    for row in 0..n_theta {
        for k in 1..n_theta {
            jac[(row, k)] = if k <= row { u[k].exp() } else { 0.0 };
        }
    }
    let gu = jac.transpose() * &g;
    let mut hu = jac.transpose() * &h * &jac;
    for k in 1..n_theta {
        let tail: f64 = (k..n_theta).map(|cc| g[cc]).sum();
        hu[(k, k)] += u[k].exp() * tail;
    }
    (
        NewtonTerms {
            loglik: ll,
            grad: gu,
            hess: hu,
        },
        theta,
        beta,
    )
}

fn solve_ascent(t: &NewtonTerms) -> DVector<f64> {
    let n = t.grad.len();
    let neg = -&t.hess;
    if let Some(c) = neg.clone().cholesky() {
        return c.solve(&t.grad);
    }
    // Levenberg damping until positive definite
    let mut mu = neg.diagonal().amax().max(1.0) * 1e-6;
    for _ in 0..30 {
        if let Some(c) = (&neg + DMatrix::identity(n, n) * mu).cholesky() {
            return c.solve(&t.grad);
        }
        mu *= 10.0;
    }
    t.grad.clone()
}

/// Maximum-likelihood cumulative logit model with one coefficient per
/// column of `x` and no random effects. Constant columns get a zero
/// coefficient.
pub fn fit_clm(data: &GroupedOrdinalDataset) -> Result<ClmFit> {
    require_two_categories(data)?;
    let n_theta = data.n_categories() as usize - 1;
    let free = varying_columns(data.x());
    let mut u = empirical_thresholds(data.y(), data.n_categories()).to_unconstrained();
    u.extend(std::iter::repeat_n(0.0, free.len()));

    let (mut cur, _, _) = terms(data, &free, &u, n_theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        let gmax = cur.grad.amax();
        if gmax <= 1e-9 * (1.0 + cur.loglik.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let step = solve_ascent(&cur);
        if step.dot(&cur.grad) < 1e-20 {
            // Newton decrement: the remaining gain is below rounding
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let (next, _, _) = terms(data, &free, &cand, n_theta);
            let flat = (next.loglik - cur.loglik).abs() <= 1e-12 * (1.0 + cur.loglik.abs())
                && next.grad.amax() < cur.grad.amax();
            if next.loglik.is_finite() && (next.loglik >= cur.loglik || flat) {
                u = cand;
                cur = next;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = cur.grad.amax() <= 1e-5 * (1.0 + cur.loglik.abs());
            break;
        }
    }
    let (fin, theta, beta) = terms(data, &free, &u, n_theta);
    let x = data.x();
    let separation = free.iter().any(|&k| {
        let col = x.column(k);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        (beta[k] * sd).abs() > SEPARATION_BOUND
    });
    if separation {
        log::warn!("CLM coefficients exceed the separation bound; data may be separable");
    }
    Ok(ClmFit {
        theta,
        beta,
        feature_names: data.feature_names().to_vec(),
        loglik: fin.loglik,
        iterations,
        converged,
        grad_norm: fin.grad.amax(),
        separation,
    })
}

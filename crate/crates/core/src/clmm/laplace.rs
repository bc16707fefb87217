//! Conditional modes of the random effects and the Laplace-approximated
//! marginal log-likelihood.

use nalgebra::{DMatrix, DVector};

use super::likelihood::obs_terms;
use crate::data::GroupedOrdinalDataset;
use crate::link::ThresholdVector;
use crate::par;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 30;
/// Newton decrement `g' H^-1 g` below which the mode is accurate to rounding,
/// however stiff the prior.
const DECREMENT_TOL: f64 = 1e-20;

/// Conditional modes and curvature for every group.
#[derive(Debug, Clone)]
pub struct InnerModes {
    /// I x (Q+1) conditional modes.
    pub modes: DMatrix<f64>,
    /// Negative Hessian of the data term, `-sum_j d2 z_j z_j^T`, at the mode.
    pub data_curvature: Vec<DMatrix<f64>>,
    /// `log p(y_i | b_i)` at the mode.
    pub group_loglik: Vec<f64>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

impl InnerModes {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }

    /// Full negative Hessian `A_i + Sigma^{-1}` of group `i`.
    pub fn neg_hessian(&self, i: usize, sigma2: &[f64]) -> DMatrix<f64> {
        let mut h = self.data_curvature[i].clone();
        for (k, s2) in sigma2.iter().enumerate() {
            h[(k, k)] += 1.0 / s2;
        }
        h
    }

    /// Conditional standard deviations `sqrt(diag(H_i^{-1}))`, I x (Q+1).
    pub fn conditional_sd(&self, sigma2: &[f64]) -> DMatrix<f64> {
        let d = sigma2.len();
        let mut out = DMatrix::zeros(self.modes.nrows(), d);
        for i in 0..self.modes.nrows() {
            // H^{-1} = S (I + S A S)^{-1} S with S = diag(sigma)
            let m = scaled_curvature(&self.data_curvature[i], sigma2);
            let inv = m
                .cholesky()
                .map(|c| c.inverse())
                .unwrap_or_else(|| DMatrix::identity(d, d));
            for k in 0..d {
                out[(i, k)] = (sigma2[k] * inv[(k, k)]).max(0.0).sqrt();
            }
        }
        out
    }
}

/// `I + S A S` for `S = diag(sqrt(sigma2))`.
fn scaled_curvature(a: &DMatrix<f64>, sigma2: &[f64]) -> DMatrix<f64> {
    let d = sigma2.len();
    DMatrix::from_fn(d, d, |r, c| {
        let v = sigma2[r].sqrt() * a[(r, c)] * sigma2[c].sqrt();
        if r == c {
            1.0 + v
        } else {
            v
        }
    })
}

struct GroupEval {
    loglik: f64,
    objective: f64,
    grad: DVector<f64>,
    curvature: DMatrix<f64>,
}

fn eval_group(
    theta: &ThresholdVector,
    base: &[f64],
    sigma2: &[f64],
    data: &GroupedOrdinalDataset,
    rows: &[usize],
    b: &DVector<f64>,
) -> GroupEval {
    let d = sigma2.len();
    let z = data.z();
    let mut loglik = 0.0;
    let mut grad = DVector::zeros(d);
    let mut curvature = DMatrix::zeros(d, d);
    for &r in rows {
        let mut lambda = base[r];
        for k in 0..d {
            lambda += z[(r, k)] * b[k];
        }
        let t = obs_terms(theta, data.y()[r], lambda);
        loglik += t.logp;
        let g1 = t.d_lambda();
        let g2 = -t.d2_lambda();
        for k in 0..d {
            let zk = z[(r, k)];
            grad[k] += g1 * zk;
            for m in 0..=k {
                curvature[(k, m)] += g2 * zk * z[(r, m)];
            }
        }
    }
    for k in 0..d {
        for m in 0..k {
            curvature[(m, k)] = curvature[(k, m)];
        }
    }
    let mut penalty = 0.0;
    for k in 0..d {
        penalty += b[k] * b[k] / sigma2[k];
        grad[k] -= b[k] / sigma2[k];
    }
    GroupEval {
        loglik,
        objective: loglik - 0.5 * penalty,
        grad,
        curvature,
    }
}

fn newton_step(e: &GroupEval, sigma2: &[f64]) -> DVector<f64> {
    let mut h = e.curvature.clone();
    for (k, s2) in sigma2.iter().enumerate() {
        h[(k, k)] += 1.0 / s2;
    }
    match h.clone().cholesky() {
        Some(c) => c.solve(&e.grad),
        None => {
            // fall back to a ridge; the objective is concave so this is rare
            let d = sigma2.len();
            let ridge = h.diagonal().amax().max(1.0) * 1e-8;
            (h + DMatrix::identity(d, d) * ridge)
                .lu()
                .solve(&e.grad)
                .unwrap_or_else(|| e.grad.clone())
        }
    }
}

struct GroupMode {
    b: DVector<f64>,
    eval: GroupEval,
    converged: bool,
    iterations: usize,
}

fn group_mode(
    theta: &ThresholdVector,
    base: &[f64],
    sigma2: &[f64],
    data: &GroupedOrdinalDataset,
    rows: &[usize],
    start: DVector<f64>,
) -> GroupMode {
    let mut b = start;
    let mut cur = eval_group(theta, base, sigma2, data, rows, &b);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        let step = newton_step(&cur, sigma2);
        let decrement = cur.grad.dot(&step);
        let small = cur.grad.amax() < GRAD_TOL || decrement.abs() < DECREMENT_TOL;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &b + &step * t;
            let e = eval_group(theta, base, sigma2, data, rows, &cand);
            // near the mode the objective change drops below rounding of a
            // sum over many rows; fall back to gradient reduction there
            let flat = (e.objective - cur.objective).abs() <= 1e-12 * (1.0 + cur.objective.abs());
            if e.objective >= cur.objective || (flat && e.grad.amax() < cur.grad.amax()) {
                b = cand;
                cur = e;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if small {
            // the step above was a polishing step past the tolerance
            converged = true;
            break;
        }
        if !accepted {
            converged = cur.grad.amax() < 1e-6 || decrement.abs() < 1e-14;
            break;
        }
    }
    GroupMode {
        b,
        eval: cur,
        converged,
        iterations,
    }
}

/// Per-group Newton-Raphson for the conditional modes
/// `argmax_b log p(y_i | b) + log N(b; 0, diag(sigma2))`. `base` is the
/// part of the linear predictor that does not involve `b`.
pub fn inner_newton_modes(
    theta: &ThresholdVector,
    base: &[f64],
    sigma2: &[f64],
    data: &GroupedOrdinalDataset,
    start: Option<&DMatrix<f64>>,
) -> InnerModes {
    let d = sigma2.len();
    assert_eq!(d, data.n_random(), "sigma2 length must equal Q+1");
    let results = par::map_slice(data.group_rows(), |rows| {
        let i = data.group()[rows[0]];
        let s = match start {
            Some(m) => DVector::from_iterator(d, m.row(i).iter().copied()),
            None => DVector::zeros(d),
        };
        let warm = start.is_some();
        let r = group_mode(theta, base, sigma2, data, rows, s);
        if r.converged || !warm {
            r
        } else {
            group_mode(theta, base, sigma2, data, rows, DVector::zeros(d))
        }
    });
    let mut modes = DMatrix::zeros(data.n_groups(), d);
    let mut data_curvature = Vec::with_capacity(results.len());
    let mut group_loglik = Vec::with_capacity(results.len());
    let mut converged = Vec::with_capacity(results.len());
    let mut iterations = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        modes.row_mut(i).copy_from(&r.b.transpose());
        data_curvature.push(r.eval.curvature);
        group_loglik.push(r.eval.loglik);
        converged.push(r.converged);
        iterations.push(r.iterations);
    }
    InnerModes {
        modes,
        data_curvature,
        group_loglik,
        converged,
        iterations,
    }
}

/// Laplace value plus the inner solution it was computed from.
#[derive(Debug, Clone)]
pub struct LaplaceValue {
    pub value: f64,
    pub inner: InnerModes,
}

/// `sum_i [log p(y_i|b_i) + log N(b_i; 0, Sigma) + (d/2) log 2pi - 1/2 log det H_i]`
/// evaluated at the conditional modes. The prior normalizer and the
/// determinant are combined as `-1/2 log det(I + S A_i S)`, which stays
/// finite as `sigma2 -> 0`.
pub fn laplace_marginal_loglik(
    theta: &ThresholdVector,
    base: &[f64],
    sigma2: &[f64],
    data: &GroupedOrdinalDataset,
    start: Option<&DMatrix<f64>>,
) -> LaplaceValue {
    let inner = inner_newton_modes(theta, base, sigma2, data, start);
    let mut value = 0.0;
    for i in 0..data.n_groups() {
        let mut quad = 0.0;
        for (k, s2) in sigma2.iter().enumerate() {
            let b = inner.modes[(i, k)];
            quad += b * b / s2;
        }
        let m = scaled_curvature(&inner.data_curvature[i], sigma2);
        let logdet = match m.clone().cholesky() {
            Some(c) => 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
            None => m.determinant().abs().ln(),
        };
        value += inner.group_loglik[i] - 0.5 * quad - 0.5 * logdet;
    }
    LaplaceValue { value, inner }
}

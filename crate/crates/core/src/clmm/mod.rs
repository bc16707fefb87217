//! Cumulative link models, with and without group-level random effects.
//!
//! The mixed model integrates the random effects out with a Laplace
//! approximation: an inner Newton-Raphson finds the conditional modes of
//! each group, and an outer quasi-Newton maximizes the approximate marginal
//! likelihood over thresholds, optional fixed coefficients and log standard
//! deviations. Thresholds are optimized as `(theta_1, log gaps)` so they stay
//! ordered at every iterate.

mod clm;
mod laplace;
mod likelihood;
pub mod optim;

pub use clm::{fit_clm, ClmFit};
pub use laplace::{inner_newton_modes, laplace_marginal_loglik, InnerModes, LaplaceValue};
pub use likelihood::{conditional_loglik, conditional_loglik_grad, linear_predictor, LoglikGradient};

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::GroupedOrdinalDataset;
use crate::error::{OmerfError, Result};
use crate::link::{clamp_prob, logit, LinkFunction, ThresholdVector, PROB_EPS};
use optim::{minimize, BfgsOptions};

/// Lower bound on random-effect standard deviations, `exp(-12)`.
pub const LOG_SD_FLOOR: f64 = -12.0;

/// Random intercept plus `q_slopes` random slopes with a diagonal covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomEffectsSpec {
    pub q_slopes: usize,
}

impl RandomEffectsSpec {
    pub fn intercept_only() -> Self {
        RandomEffectsSpec { q_slopes: 0 }
    }

    pub fn n_effects(&self) -> usize {
        self.q_slopes + 1
    }

    pub fn check(&self, data: &GroupedOrdinalDataset) -> Result<()> {
        if data.n_random() != self.n_effects() {
            return Err(OmerfError::dim(format!(
                "random-effects spec has {} terms but z has {} columns",
                self.n_effects(),
                data.n_random()
            )));
        }
        Ok(())
    }
}

/// Starting point for the outer optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ClmmStart {
    pub theta: ThresholdVector,
    pub beta: Option<Vec<f64>>,
    pub log_sd: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClmmOptions {
    /// Tried before the default starts.
    pub start: Option<ClmmStart>,
    /// Log standard deviations of the default starts, tried in order until
    /// one converges.
    pub log_sd_starts: Vec<f64>,
    pub bfgs: BfgsOptions,
}

impl Default for ClmmOptions {
    fn default() -> Self {
        ClmmOptions {
            start: None,
            log_sd_starts: vec![0.0, 0.5f64.ln(), 2f64.ln()],
            bfgs: BfgsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClmmFit {
    pub theta: ThresholdVector,
    pub beta: Option<Vec<f64>>,
    pub feature_names: Vec<String>,
    /// Diagonal of the random-effect covariance.
    pub sigma2: Vec<f64>,
    pub random_names: Vec<String>,
    pub group_labels: Vec<String>,
    /// Conditional modes, one row per group.
    pub b_modes: Vec<Vec<f64>>,
    /// Conditional standard deviations `sqrt(diag(H_i^{-1}))`.
    pub b_sd: Vec<Vec<f64>>,
    pub marginal_loglik: f64,
    pub offset_used: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub starts_tried: usize,
    /// Fitted with a single group; variance estimates are not meaningful.
    pub single_group: bool,
}

impl ClmmFit {
    /// Intraclass correlation of the random intercept.
    pub fn icc(&self) -> f64 {
        icc(self.sigma2[0])
    }

    /// Conditional modes of a group, `None` if unseen during fitting.
    pub fn modes_for(&self, label: &str) -> Option<&[f64]> {
        self.group_labels
            .iter()
            .position(|g| g == label)
            .map(|i| self.b_modes[i].as_slice())
    }

    /// Latent score `offset + x beta + z b_group`; unseen groups use `b = 0`.
    pub fn latent(
        &self,
        x: &DMatrix<f64>,
        z: &DMatrix<f64>,
        groups: &[String],
        offset: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        if let Some(beta) = &self.beta {
            if x.ncols() != beta.len() {
                return Err(OmerfError::dim(format!(
                    "model has {} fixed effects, data has {} columns",
                    beta.len(),
                    x.ncols()
                )));
            }
        }
        if z.ncols() != self.sigma2.len() {
            return Err(OmerfError::dim(format!(
                "model has {} random terms, data has {}",
                self.sigma2.len(),
                z.ncols()
            )));
        }
        let index: HashMap<&str, usize> = self
            .group_labels
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        Ok((0..x.nrows())
            .map(|r| {
                let mut l = offset.map_or(0.0, |o| o[r]);
                if let Some(beta) = &self.beta {
                    l += beta.iter().enumerate().map(|(k, b)| b * x[(r, k)]).sum::<f64>();
                }
                if let Some(&g) = index.get(groups[r].as_str()) {
                    l += (0..z.ncols()).map(|k| z[(r, k)] * self.b_modes[g][k]).sum::<f64>();
                }
                l
            })
            .collect())
    }

    pub fn modes_matrix(&self) -> DMatrix<f64> {
        let d = self.sigma2.len();
        DMatrix::from_fn(self.b_modes.len(), d, |i, k| self.b_modes[i][k])
    }
}

/// `sigma2 / (sigma2 + pi^2/3)`: share of latent variance due to grouping.
pub fn icc(sigma2_intercept: f64) -> f64 {
    let s = sigma2_intercept.max(0.0);
    s / (s + LinkFunction.residual_variance())
}

/// Thresholds at the empirical cumulative logits, strictly increasing.
pub(crate) fn empirical_thresholds(y: &[u32], n_categories: u32) -> ThresholdVector {
    let n = y.len() as f64;
    let mut theta = Vec::with_capacity(n_categories as usize - 1);
    let mut prev = f64::NEG_INFINITY;
    for c in 1..n_categories {
        let cum = y.iter().filter(|&&v| v <= c).count() as f64 / n;
        let mut t = logit(clamp_prob(cum, PROB_EPS)).expect("clamped");
        if t <= prev {
            t = prev + 1e-2;
        }
        theta.push(t);
        prev = t;
    }
    ThresholdVector::new(theta).expect("constructed increasing")
}

/// Columns of `x` with any variation; constant columns carry no information
/// beyond the thresholds and are held at zero.
pub(crate) fn varying_columns(x: &DMatrix<f64>) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&k| {
            let col = x.column(k);
            col.iter().any(|v| *v != col[0])
        })
        .collect()
}

pub(crate) fn require_two_categories(data: &GroupedOrdinalDataset) -> Result<()> {
    if data.observed_categories() < 2 {
        return Err(OmerfError::validation(
            "response has fewer than 2 observed categories",
        ));
    }
    Ok(())
}

struct Layout {
    n_theta: usize,
    free_beta: Vec<usize>,
    n_beta: usize,
    n_sd: usize,
}

impl Layout {
    fn unpack(&self, u: &[f64]) -> (ThresholdVector, Option<Vec<f64>>, Vec<f64>) {
        let theta = ThresholdVector::from_unconstrained(&u[..self.n_theta]);
        let beta = (self.n_beta > 0).then(|| {
            let mut beta = vec![0.0; self.n_beta];
            for (slot, &k) in self.free_beta.iter().enumerate() {
                beta[k] = u[self.n_theta + slot];
            }
            beta
        });
        let sd_at = self.n_theta + self.free_beta.len();
        let sigma2 = u[sd_at..sd_at + self.n_sd]
            .iter()
            .map(|ls| (2.0 * ls.max(LOG_SD_FLOOR)).exp())
            .collect();
        (theta, beta, sigma2)
    }

    fn pack(&self, theta: &ThresholdVector, beta: Option<&[f64]>, log_sd: &[f64]) -> Vec<f64> {
        let mut u = theta.to_unconstrained();
        for &k in &self.free_beta {
            u.push(beta.map_or(0.0, |b| b[k]));
        }
        u.extend(log_sd.iter().map(|v| v.max(LOG_SD_FLOOR)));
        u
    }
}

fn base_predictor(data: &GroupedOrdinalDataset, beta: Option<&[f64]>, offset: &[f64]) -> Vec<f64> {
    let x = data.x();
    (0..data.n_rows())
        .map(|r| {
            offset[r]
                + beta.map_or(0.0, |b| b.iter().enumerate().map(|(k, bk)| bk * x[(r, k)]).sum())
        })
        .collect()
}

/// Fit a cumulative link mixed model by maximizing the Laplace-approximated
/// marginal likelihood. `offset` enters the linear predictor with a fixed
/// coefficient of one; `fixed_effects` adds a coefficient per column of `x`.
pub fn fit_clmm(
    data: &GroupedOrdinalDataset,
    spec: RandomEffectsSpec,
    offset: Option<&[f64]>,
    fixed_effects: bool,
    options: &ClmmOptions,
) -> Result<ClmmFit> {
    spec.check(data)?;
    require_two_categories(data)?;
    let j = data.n_rows();
    let zeros = vec![0.0; j];
    let offset_vec = match offset {
        Some(o) if o.len() != j => {
            return Err(OmerfError::dim(format!("offset has {} entries, data {j}", o.len())))
        }
        Some(o) => o,
        None => &zeros,
    };
    if data.n_groups() == 1 {
        log::warn!("fitting a mixed model with a single group");
    }

    let layout = Layout {
        n_theta: data.n_categories() as usize - 1,
        free_beta: if fixed_effects { varying_columns(data.x()) } else { Vec::new() },
        n_beta: if fixed_effects { data.n_features() } else { 0 },
        n_sd: spec.n_effects(),
    };
    let mean_offset = offset_vec.iter().sum::<f64>() / j as f64;
    let theta0 = empirical_thresholds(data.y(), data.n_categories()).shifted(mean_offset);

    let warm: RefCell<Option<DMatrix<f64>>> = RefCell::new(None);
    let objective = |u: &[f64]| -> f64 {
        let (theta, beta, sigma2) = layout.unpack(u);
        let base = base_predictor(data, beta.as_deref(), offset_vec);
        let start = warm.borrow().clone();
        let lv = laplace_marginal_loglik(&theta, &base, &sigma2, data, start.as_ref());
        if !lv.inner.all_converged() || !lv.value.is_finite() {
            return f64::NAN;
        }
        *warm.borrow_mut() = Some(lv.inner.modes);
        -lv.value
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(s) = &options.start {
        starts.push(layout.pack(&s.theta, s.beta.as_deref(), &s.log_sd));
    }
    for &ls in &options.log_sd_starts {
        starts.push(layout.pack(&theta0, None, &vec![ls; layout.n_sd]));
    }

    let mut best: Option<optim::BfgsResult> = None;
    let mut tried = 0;
    for u0 in &starts {
        tried += 1;
        *warm.borrow_mut() = None;
        let r = minimize(objective, u0, &options.bfgs);
        let better = best
            .as_ref()
            .is_none_or(|b| r.f.is_finite() && (!b.f.is_finite() || r.f < b.f));
        let done = r.converged;
        if better || done {
            best = Some(r);
        }
        if done {
            break;
        }
    }
    let best = best.expect("at least one start");
    if !best.converged {
        return Err(OmerfError::Convergence {
            context: format!("CLMM outer optimization after {tried} starts"),
            loglik: -best.f,
        });
    }

    let (theta, beta, mut sigma2) = layout.unpack(&best.x);
    let base = base_predictor(data, beta.as_deref(), offset_vec);
    let lv = laplace_marginal_loglik(&theta, &base, &sigma2, data, warm.borrow().as_ref());
    let sd = lv.inner.conditional_sd(&sigma2);
    let mut modes = lv.inner.modes.clone();
    let mut sd = sd;
    let sd_at = layout.n_theta + layout.free_beta.len();
    for k in 0..layout.n_sd {
        if best.x[sd_at + k] <= LOG_SD_FLOOR + 1e-9 {
            sigma2[k] = 0.0;
            modes.column_mut(k).fill(0.0);
            sd.column_mut(k).fill(0.0);
        }
    }
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    };
    Ok(ClmmFit {
        theta,
        beta,
        feature_names: if fixed_effects { data.feature_names().to_vec() } else { Vec::new() },
        sigma2,
        random_names: data.random_names().to_vec(),
        group_labels: data.group_labels().to_vec(),
        b_modes: rows(&modes),
        b_sd: rows(&sd),
        marginal_loglik: lv.value,
        offset_used: offset.is_some(),
        iterations: best.iterations,
        evaluations: best.evaluations,
        converged: true,
        starts_tried: tried,
        single_group: data.n_groups() == 1,
    })
}

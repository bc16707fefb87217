//! Cumulative-logit link and threshold/probability algebra.
//!
//! Convention throughout the crate: for a latent score `lambda`,
//! `P(y <= c) = inv_logit(theta[c] - lambda)`, so a larger `lambda` moves
//! mass toward higher categories.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{OmerfError, Result};

/// Clamping epsilon used wherever a probability is fed to [`logit`].
pub const PROB_EPS: f64 = 1e-6;

/// Logit link. `p` must lie strictly inside (0, 1).
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(OmerfError::Domain(format!(
            "logit needs p in (0,1), got {p}"
        )));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Logistic cdf, evaluated without overflow for large |x|.
#[inline]
pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic density `F(x)(1 - F(x))`.
#[inline]
pub fn logistic_pdf(x: f64) -> f64 {
    let f = inv_logit(x);
    f * (1.0 - f)
}

pub fn clamp_prob(p: f64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0 && eps < 0.5);
    p.max(eps).min(1.0 - eps)
}

/// `P(lower < e <= upper)` for standard logistic `e`, accurate in both tails.
/// Infinite bounds stand for the implicit sentinel thresholds.
#[inline]
pub fn interval_prob(lower: f64, upper: f64) -> f64 {
    if lower > 0.0 {
        // both bounds in the upper tail: difference of survival functions
        inv_logit(-lower) - inv_logit(-upper)
    } else {
        inv_logit(upper) - inv_logit(lower)
    }
}

/// Strictly increasing cut-points `theta_1 < ... < theta_{C-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdVector(Vec<f64>);

impl ThresholdVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(OmerfError::validation("need at least one threshold (C >= 2)"));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(OmerfError::validation("thresholds must be finite"));
        }
        if theta.windows(2).any(|w| w[0] >= w[1]) {
            return Err(OmerfError::validation(format!(
                "thresholds must be strictly increasing: {theta:?}"
            )));
        }
        Ok(ThresholdVector(theta))
    }

    /// Build from `(theta_1, log gap_2, ..., log gap_{C-1})`. Always ordered
    /// unless a gap underflows to zero, in which case the gap is floored.
    pub fn from_unconstrained(u: &[f64]) -> Self {
        let mut theta = Vec::with_capacity(u.len());
        let mut cur = u[0];
        theta.push(cur);
        for &d in &u[1..] {
            let gap = d.exp().max(1e-10);
            cur += gap;
            theta.push(cur);
        }
        ThresholdVector(theta)
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.0.len());
        u.push(self.0[0]);
        for w in self.0.windows(2) {
            u.push((w[1] - w[0]).ln());
        }
        u
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn n_categories(&self) -> usize {
        self.0.len() + 1
    }

    /// Lower and upper latent bounds of category `y` (1-based) for score `lambda`.
    #[inline]
    pub fn bounds(&self, y: u32, lambda: f64) -> (f64, f64) {
        let c = y as usize;
        let lower = if c == 1 {
            f64::NEG_INFINITY
        } else {
            self.0[c - 2] - lambda
        };
        let upper = if c == self.0.len() + 1 {
            f64::INFINITY
        } else {
            self.0[c - 1] - lambda
        };
        (lower, upper)
    }

    /// Every threshold shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        ThresholdVector(self.0.iter().map(|t| t + delta).collect())
    }
}

impl TryFrom<Vec<f64>> for ThresholdVector {
    type Error = OmerfError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ThresholdVector::new(v)
    }
}

impl From<ThresholdVector> for Vec<f64> {
    fn from(t: ThresholdVector) -> Self {
        t.0
    }
}

/// Cumulative probabilities `gamma_c = P(y <= c)`, c = 1..C-1.
pub fn cumulative_probs(theta: &ThresholdVector, lambda: f64) -> Vec<f64> {
    theta.0.iter().map(|t| inv_logit(t - lambda)).collect()
}

/// Category probabilities `pi_1..pi_C` for latent score `lambda`.
pub fn category_probs(theta: &ThresholdVector, lambda: f64) -> Vec<f64> {
    let c = theta.n_categories();
    (1..=c as u32)
        .map(|y| {
            let (lo, hi) = theta.bounds(y, lambda);
            interval_prob(lo, hi)
        })
        .collect()
}

/// Probability of a single category, same arithmetic as [`category_probs`].
#[inline]
pub fn category_prob(theta: &ThresholdVector, y: u32, lambda: f64) -> f64 {
    let (lo, hi) = theta.bounds(y, lambda);
    interval_prob(lo, hi)
}

/// Index (1-based) of the most probable category; ties go to the lower one.
pub fn argmax_category(probs: &[f64]) -> u32 {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best as u32 + 1
}

/// The link is fixed to the cumulative logit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkFunction;

impl LinkFunction {
    /// Standard deviation of the standard logistic latent residual, pi/sqrt(3).
    pub fn residual_sd(&self) -> f64 {
        PI / 3f64.sqrt()
    }

    pub fn residual_variance(&self) -> f64 {
        PI * PI / 3.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn th(v: &[f64]) -> ThresholdVector {
        ThresholdVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn logit_examples() {
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(logit(0.7310585786).unwrap(), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(inv_logit(-1.0), 0.2689414214, epsilon = 1e-8);
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
        assert!(logit(f64::NAN).is_err());
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_prob(0.0, 1e-6), 1e-6);
        assert_eq!(clamp_prob(0.5, 1e-6), 0.5);
        assert_eq!(clamp_prob(1.2, 1e-6), 1.0 - 1e-6);
    }

    #[test]
    fn category_probs_examples() {
        let p = category_probs(&th(&[-1.0, 1.0]), 0.0);
        for (a, b) in p.iter().zip([0.26894, 0.46212, 0.26894]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-5);
        }
        assert_eq!(category_probs(&th(&[0.0]), 0.0), vec![0.5, 0.5]);
        let p = category_probs(&th(&[-1.0, 1.0]), 50.0);
        for (a, b) in p.iter().zip([0.0, 0.0, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn threshold_validation() {
        assert!(ThresholdVector::new(vec![1.0, 1.0]).is_err());
        assert!(ThresholdVector::new(vec![]).is_err());
        assert!(serde_json::from_str::<ThresholdVector>("[2.0, 1.0]").is_err());
        let t = th(&[-0.3, 0.1, 2.5]);
        let back = ThresholdVector::from_unconstrained(&t.to_unconstrained());
        for (a, b) in back.as_slice().iter().zip(t.as_slice()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_category(&[0.4, 0.4, 0.2]), 1);
        assert_eq!(argmax_category(&[0.2, 0.3, 0.5]), 3);
    }

    #[test]
    fn residual_sd_is_logistic() {
        assert_abs_diff_eq!(LinkFunction.residual_sd(), 1.813799364, epsilon = 1e-8);
    }

    fn thresholds() -> impl Strategy<Value = Vec<f64>> {
        (1usize..6, -5.0f64..5.0).prop_flat_map(|(k, start)| {
            proptest::collection::vec(0.01f64..3.0, k).prop_map(move |gaps| {
                let mut t = vec![start];
                for g in gaps {
                    let last = *t.last().unwrap();
                    t.push(last + g);
                }
                t
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn probs_sum_to_one(t in thresholds(), lambda in -30.0f64..30.0) {
            let theta = th(&t);
            let p = category_probs(&theta, lambda);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let g = cumulative_probs(&theta, lambda);
            prop_assert!(g.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn shift_equivariance(t in thresholds(), lambda in -10.0f64..10.0, delta in -5.0f64..5.0) {
            let theta = th(&t);
            let a = category_probs(&theta, lambda);
            let b = category_probs(&theta.shifted(delta), lambda + delta);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn logit_roundtrip(p in 1e-8f64..(1.0 - 1e-8)) {
            prop_assert!((inv_logit(logit(p).unwrap()) - p).abs() < 1e-10);
        }
    }
}

//! Probability-forest initializer: one regression forest per class on the
//! class indicator, combined into cumulative probabilities and a scalar
//! latent score per row.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OmerfError, Result};
use crate::forest::{fit_forest, ForestConfig, RandomForest};
use crate::link::{argmax_category, clamp_prob, logit, ThresholdVector, PROB_EPS};
use crate::par;
use crate::seeding::derive_seed;

/// Which fitted values the initializer uses on its own training rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPrediction {
    /// Out-of-bag class probabilities, in-sample for rows no tree left out.
    #[default]
    Oob,
    InSample,
}

/// How class probabilities are produced. Only the per-class probability
/// forest is implemented; the enum leaves room for a score-optimized variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    ProbabilityForest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalInitializer {
    pub mode: InitMode,
    pub n_categories: u32,
    /// One forest per class, fitted on `1{y = c}`.
    pub forests: Vec<RandomForest>,
}

impl OrdinalInitializer {
    pub fn fit(x: &DMatrix<f64>, y: &[u32], n_categories: u32, config: &ForestConfig) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(OmerfError::dim("x rows and label length differ"));
        }
        let mut seen = vec![false; n_categories as usize];
        for &v in y {
            if v == 0 || v > n_categories {
                return Err(OmerfError::validation(format!("label {v} outside 1..{n_categories}")));
            }
            seen[v as usize - 1] = true;
        }
        if seen.iter().filter(|s| **s).count() < 2 {
            return Err(OmerfError::validation(
                "response has fewer than 2 observed categories",
            ));
        }
        let classes: Vec<u32> = (1..=n_categories).collect();
        let forests = par::map_slice(&classes, |&c| {
            let target: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v == c))).collect();
            let cfg = config.clone().with_seed(derive_seed(config.seed, &[u64::from(c)]));
            fit_forest(x, &target, &cfg)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(OrdinalInitializer {
            mode: InitMode::ProbabilityForest,
            n_categories,
            forests,
        })
    }

    fn assemble(&self, per_class: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let n = per_class.first().map_or(0, Vec::len);
        (0..n)
            .map(|r| {
                let raw: Vec<f64> = per_class.iter().map(|p| p[r]).collect();
                normalize_probs(&raw)
            })
            .collect()
    }

    /// Class probabilities for new rows, one vector of length C per row.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        let per_class = self
            .forests
            .iter()
            .map(|f| f.predict(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.assemble(per_class))
    }

    /// Class probabilities for the training rows.
    pub fn training_proba(&self, x: &DMatrix<f64>, how: InitPrediction) -> Result<Vec<Vec<f64>>> {
        let bagged = self.forests.iter().all(|f| f.config.bootstrap);
        if how == InitPrediction::InSample || !bagged {
            return self.predict_proba(x);
        }
        let per_class = self
            .forests
            .iter()
            .map(|f| {
                let oob = f.oob_predict(x)?;
                let fitted = if oob.covered.iter().all(|c| *c) {
                    None
                } else {
                    Some(f.predict(x)?)
                };
                Ok(oob
                    .values
                    .iter()
                    .enumerate()
                    .map(|(r, v)| if oob.covered[r] { *v } else { fitted.as_ref().expect("computed")[r] })
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(self.assemble(per_class))
    }

    pub fn predict_class(&self, x: &DMatrix<f64>) -> Result<Vec<u32>> {
        Ok(self.predict_proba(x)?.iter().map(|p| argmax_category(p)).collect())
    }
}

/// Floor every class probability at `PROB_EPS` and rescale to sum to one.
/// Vectors that already sum to one within 1e-12 are only floored.
pub fn normalize_probs(raw: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = raw.iter().map(|p| p.max(PROB_EPS)).collect();
    let total: f64 = floored.iter().sum();
    if (total - 1.0).abs() <= 1e-12 {
        floored
    } else {
        floored.iter().map(|p| p / total).collect()
    }
}

/// Running sums `P(y <= c)`, c = 1..C-1.
pub fn cumulative_from_probs(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs[..probs.len() - 1]
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

/// Thresholds at the logits of the marginal cumulative class frequencies,
/// computed through the same path as the per-row probabilities.
pub fn marginal_thresholds(y: &[u32], n_categories: u32) -> Result<ThresholdVector> {
    let freqs = class_frequencies(y, n_categories);
    let gamma = cumulative_from_probs(&normalize_probs(&freqs));
    let mut theta = Vec::with_capacity(gamma.len());
    let mut prev = f64::NEG_INFINITY;
    for g in gamma {
        let mut t = logit(clamp_prob(g, PROB_EPS))?;
        if t <= prev {
            // empty middle category
            t = prev + 1e-2;
        }
        theta.push(t);
        prev = t;
    }
    ThresholdVector::new(theta)
}

pub fn class_frequencies(y: &[u32], n_categories: u32) -> Vec<f64> {
    let mut counts = vec![0.0; n_categories as usize];
    for &v in y {
        counts[v as usize - 1] += 1.0;
    }
    let n = y.len() as f64;
    counts.iter().map(|c| c / n).collect()
}

/// `mean_c [theta0_c - logit(clamp(gamma_c))]` for one row of class
/// probabilities. Larger values mean stochastically higher categories.
pub fn latent_from_probs(probs: &[f64], theta0: &ThresholdVector) -> f64 {
    let gamma = cumulative_from_probs(&normalize_probs(probs));
    let t = theta0.as_slice();
    let sum: f64 = gamma
        .iter()
        .zip(t)
        .map(|(g, tc)| tc - logit(clamp_prob(*g, PROB_EPS)).expect("clamped"))
        .sum();
    sum / t.len() as f64
}

/// Initial latent scores and thresholds for the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLatent {
    pub eta0: Vec<f64>,
    pub theta0: ThresholdVector,
    pub initializer: OrdinalInitializer,
}

pub fn init_latent(
    x: &DMatrix<f64>,
    y: &[u32],
    n_categories: u32,
    config: &ForestConfig,
    how: InitPrediction,
) -> Result<InitialLatent> {
    let initializer = OrdinalInitializer::fit(x, y, n_categories, config)?;
    let theta0 = marginal_thresholds(y, n_categories)?;
    let probs = initializer.training_proba(x, how)?;
    let eta0 = probs.iter().map(|p| latent_from_probs(p, &theta0)).collect();
    Ok(InitialLatent {
        eta0,
        theta0,
        initializer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn marginal_probabilities_give_zero_latent() {
        let y = [1, 1, 2, 3, 3, 3, 2, 1, 3, 2, 2];
        let theta0 = marginal_thresholds(&y, 3).unwrap();
        let freqs = class_frequencies(&y, 3);
        assert_eq!(latent_from_probs(&freqs, &theta0), 0.0);
    }

    #[test]
    fn plugged_in_row() {
        let theta0 = ThresholdVector::new(vec![-(2f64.ln()), 2f64.ln()]).unwrap();
        let probs = [0.9, 0.09, 0.01];
        assert_abs_diff_eq!(latent_from_probs(&probs, &theta0), -3.396, epsilon = 1e-3);
    }

    #[test]
    fn normalized_probs_sum_to_one() {
        let p = normalize_probs(&[0.2, 0.0, 0.5]);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(p.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn empty_middle_category_keeps_order() {
        let t = marginal_thresholds(&[1, 1, 3, 3], 3).unwrap();
        assert!(t.as_slice()[1] > t.as_slice()[0]);
    }
}

//! Conditional log-likelihood of the cumulative logit model and its
//! analytic derivatives.

use nalgebra::DMatrix;

use crate::data::GroupedOrdinalDataset;
use crate::link::{inv_logit, interval_prob, logistic_pdf, ThresholdVector};

/// Smallest category probability passed to `ln`.
const MIN_PROB: f64 = 1e-300;

/// Log-probability of one observation and its derivatives with respect to
/// the upper (`theta_y - lambda`) and lower (`theta_{y-1} - lambda`) bounds.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ObsTerms {
    pub logp: f64,
    pub d_upper: f64,
    pub d_lower: f64,
    pub d2_upper: f64,
    pub d2_lower: f64,
    pub d2_cross: f64,
}

impl ObsTerms {
    /// d log p / d lambda.
    #[inline]
    pub fn d_lambda(&self) -> f64 {
        -(self.d_upper + self.d_lower)
    }

    /// d^2 log p / d lambda^2.
    #[inline]
    pub fn d2_lambda(&self) -> f64 {
        self.d2_upper + 2.0 * self.d2_cross + self.d2_lower
    }
}

#[inline]
fn pdf_and_slope(t: f64) -> (f64, f64) {
    if t.is_infinite() {
        return (0.0, 0.0);
    }
    let f = logistic_pdf(t);
    (f, f * (1.0 - 2.0 * inv_logit(t)))
}

#[inline]
pub(crate) fn obs_terms(theta: &ThresholdVector, y: u32, lambda: f64) -> ObsTerms {
    let (lower, upper) = theta.bounds(y, lambda);
    let p = interval_prob(lower, upper).max(MIN_PROB);
    let (fu, su) = pdf_and_slope(upper);
    let (fl, sl) = pdf_and_slope(lower);
    let d_upper = fu / p;
    let d_lower = -fl / p;
    ObsTerms {
        logp: p.ln(),
        d_upper,
        d_lower,
        d2_upper: su / p - d_upper * d_upper,
        d2_lower: -sl / p - d_lower * d_lower,
        d2_cross: -d_upper * d_lower,
    }
}

/// Linear predictor `offset + x beta + z b_group` for every row.
pub fn linear_predictor(
    data: &GroupedOrdinalDataset,
    beta: Option<&[f64]>,
    b: &DMatrix<f64>,
    offset: &[f64],
) -> Vec<f64> {
    let x = data.x();
    let z = data.z();
    (0..data.n_rows())
        .map(|r| {
            let mut eta = offset[r];
            if let Some(beta) = beta {
                for (k, bk) in beta.iter().enumerate() {
                    eta += x[(r, k)] * bk;
                }
            }
            let g = data.group()[r];
            for k in 0..z.ncols() {
                eta += z[(r, k)] * b[(g, k)];
            }
            eta
        })
        .collect()
}

/// `sum_j log pi_{j, y_j}` with `lambda = offset + x beta + z b`. `b` is
/// I x (Q+1); `beta = None` drops the fixed-effect term.
pub fn conditional_loglik(
    theta: &ThresholdVector,
    beta: Option<&[f64]>,
    b: &DMatrix<f64>,
    data: &GroupedOrdinalDataset,
    offset: &[f64],
) -> f64 {
    let lambda = linear_predictor(data, beta, b, offset);
    lambda
        .iter()
        .zip(data.y())
        .map(|(l, &y)| obs_terms(theta, y, *l).logp)
        .sum()
}

/// Gradient of [`conditional_loglik`] in the natural parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikGradient {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub b: DMatrix<f64>,
}

pub fn conditional_loglik_grad(
    theta: &ThresholdVector,
    beta: Option<&[f64]>,
    b: &DMatrix<f64>,
    data: &GroupedOrdinalDataset,
    offset: &[f64],
) -> (f64, LoglikGradient) {
    let k = theta.as_slice().len();
    let c = k as u32 + 1;
    let lambda = linear_predictor(data, beta, b, offset);
    let mut g_theta = vec![0.0; k];
    let mut g_beta = vec![0.0; beta.map_or(0, <[f64]>::len)];
    let mut g_b = DMatrix::zeros(b.nrows(), b.ncols());
    let mut ll = 0.0;
    for (r, (&l, &y)) in lambda.iter().zip(data.y()).enumerate() {
        let t = obs_terms(theta, y, l);
        ll += t.logp;
        if y < c {
            g_theta[y as usize - 1] += t.d_upper;
        }
        if y > 1 {
            g_theta[y as usize - 2] += t.d_lower;
        }
        let dl = t.d_lambda();
        for (kk, gb) in g_beta.iter_mut().enumerate() {
            *gb += dl * data.x()[(r, kk)];
        }
        let g = data.group()[r];
        for q in 0..data.z().ncols() {
            g_b[(g, q)] += dl * data.z()[(r, q)];
        }
    }
    (
        ll,
        LoglikGradient {
            theta: g_theta,
            beta: g_beta,
            b: g_b,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn single(y: u32, c: u32) -> GroupedOrdinalDataset {
        GroupedOrdinalDataset::new(
            DMatrix::zeros(1, 0),
            DMatrix::from_element(1, 1, 1.0),
            vec![0],
            vec![y],
            c,
            vec![],
            vec!["(Intercept)".into()],
            vec!["g".into()],
        )
        .unwrap()
    }

    #[test]
    fn symmetric_binary_is_log_half() {
        let d = single(1, 2);
        let th = ThresholdVector::new(vec![0.0]).unwrap();
        let ll = conditional_loglik(&th, None, &DMatrix::zeros(1, 1), &d, &[0.0]);
        assert_abs_diff_eq!(ll, 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn top_category_example() {
        let d = single(3, 3);
        let th = ThresholdVector::new(vec![-1.0, 1.0]).unwrap();
        let ll = conditional_loglik(&th, None, &DMatrix::zeros(1, 1), &d, &[0.0]);
        assert_abs_diff_eq!(ll, 0.26894f64.ln(), epsilon = 1e-4);
    }

    #[test]
    fn second_derivatives_match_differences() {
        let th = ThresholdVector::new(vec![-0.7, 0.4, 1.9]).unwrap();
        for y in 1..=4 {
            for &l in &[-3.0, -0.2, 0.5, 4.0] {
                let h = 1e-5;
                let t = obs_terms(&th, y, l);
                let dp = obs_terms(&th, y, l + h).d_lambda();
                let dm = obs_terms(&th, y, l - h).d_lambda();
                assert_abs_diff_eq!(t.d2_lambda(), (dp - dm) / (2.0 * h), epsilon = 1e-7);
                assert!(t.d2_lambda() < 0.0, "log-concave in lambda");
            }
        }
    }
}

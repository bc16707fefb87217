//! Simulation designs: covariates, fixed-effect functional forms, random
//! effects and latent-to-ordinal conversion with balanced categories.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{GroupedOrdinalDataset, Schema};
use crate::error::{OmerfError, Result};
use crate::link::{category_probs, inv_logit, logit, ThresholdVector};
use crate::seeding::stream_rng;

pub const N_COVARIATES: usize = 7;

const STREAM_COVARIATES: u64 = 0;
const STREAM_RANDOM_EFFECTS: u64 = 1;
const STREAM_LABELS: u64 = 2;
const STREAM_SPLIT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedForm {
    /// `alpha (3 + 7 X1^2 - 5 X2 + X2 X3^2) + beta tree(X4, X5, X6)`
    PolynomialTree,
    /// `3 + 7 X1 - 5 X2 + X2 X3`
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub id: u32,
    pub form: FixedForm,
    pub alpha: f64,
    pub beta: f64,
    /// Random-intercept variance.
    pub sigma2_1: f64,
    /// Random-slope variance (slope on X1); `None` for intercept-only designs.
    pub sigma2_2: Option<f64>,
    pub n_groups: usize,
    pub n_per_group: usize,
    pub n_categories: u32,
    pub seed: u64,
}

/// `(form, alpha, beta, sigma2_1, sigma2_2)` for designs 1..=10.
pub const DGP_TABLE: [(FixedForm, f64, f64, f64, Option<f64>); 10] = [
    (FixedForm::PolynomialTree, 0.3, 0.7, 1.0, None),
    (FixedForm::PolynomialTree, 0.7, 0.3, 1.0, None),
    (FixedForm::PolynomialTree, 0.3, 0.7, 5.0, None),
    (FixedForm::PolynomialTree, 0.7, 0.3, 5.0, None),
    (FixedForm::PolynomialTree, 0.3, 0.7, 0.3, Some(0.5)),
    (FixedForm::PolynomialTree, 0.7, 0.3, 0.3, Some(0.5)),
    (FixedForm::PolynomialTree, 0.3, 0.7, 1.0, Some(1.0)),
    (FixedForm::PolynomialTree, 0.7, 0.3, 1.0, Some(1.0)),
    (FixedForm::Linear, 0.0, 0.0, 1.0, None),
    (FixedForm::Linear, 0.0, 0.0, 5.0, None),
];

impl DgpSpec {
    /// Design `id` (1..=10) with 10 groups of 100 rows and 3 categories.
    pub fn table(id: u32, seed: u64) -> Result<Self> {
        if !(1..=10).contains(&id) {
            return Err(OmerfError::validation(format!("DGP id must be in 1..=10, got {id}")));
        }
        let (form, alpha, beta, sigma2_1, sigma2_2) = DGP_TABLE[id as usize - 1];
        Ok(DgpSpec {
            id,
            form,
            alpha,
            beta,
            sigma2_1,
            sigma2_2,
            n_groups: 10,
            n_per_group: 100,
            n_categories: 3,
            seed,
        })
    }

    pub fn q_slopes(&self) -> usize {
        usize::from(self.sigma2_2.is_some())
    }

    pub fn n_rows(&self) -> usize {
        self.n_groups * self.n_per_group
    }

    /// Column roles of the CSV written for this design.
    pub fn schema(&self) -> Schema {
        Schema {
            label: "y".into(),
            group: "group".into(),
            fixed: (1..=N_COVARIATES).map(|k| format!("x{k}")).collect(),
            random_slopes: if self.sigma2_2.is_some() { vec!["x1".into()] } else { vec![] },
            categorical: Default::default(),
            categories: Some(self.n_categories),
            drop_missing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(OmerfError::validation("alpha and beta must be >= 0"));
        }
        if self.sigma2_1 < 0.0 || self.sigma2_2.is_some_and(|v| v < 0.0) {
            return Err(OmerfError::validation("variances must be >= 0"));
        }
        if self.n_groups == 0 || self.n_per_group == 0 {
            return Err(OmerfError::validation("need at least one group and one row per group"));
        }
        if self.n_categories < 2 {
            return Err(OmerfError::validation("need C >= 2"));
        }
        Ok(())
    }
}

/// Piecewise-constant function of the covariates; `x[var] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeFunctionSpec {
    Leaf(f64),
    Split {
        /// 0-based covariate column (3, 4, 5 for X4, X5, X6).
        var: usize,
        threshold: f64,
        left: Box<TreeFunctionSpec>,
        right: Box<TreeFunctionSpec>,
    },
}

impl Default for TreeFunctionSpec {
    /// X4 <= 0: (X5 <= 0 ? 0 : 4); otherwise (X6 <= 0 ? 8 : 12).
    fn default() -> Self {
        use TreeFunctionSpec::*;
        let split = |var, l, r| Split {
            var,
            threshold: 0.0,
            left: Box::new(Leaf(l)),
            right: Box::new(Leaf(r)),
        };
        Split {
            var: 3,
            threshold: 0.0,
            left: Box::new(split(4, 0.0, 4.0)),
            right: Box::new(split(5, 8.0, 12.0)),
        }
    }
}

impl TreeFunctionSpec {
    pub fn eval(&self, row: &[f64]) -> f64 {
        match self {
            TreeFunctionSpec::Leaf(v) => *v,
            TreeFunctionSpec::Split {
                var,
                threshold,
                left,
                right,
            } => {
                if row[*var] <= *threshold {
                    left.eval(row)
                } else {
                    right.eval(row)
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeFunctionSpec::Leaf(_) => 1,
            TreeFunctionSpec::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn walk(t: &TreeFunctionSpec) -> Result<()> {
            match t {
                TreeFunctionSpec::Leaf(v) if v.is_finite() => Ok(()),
                TreeFunctionSpec::Leaf(_) => Err(OmerfError::validation("tree leaf must be finite")),
                TreeFunctionSpec::Split { var, left, right, .. } => {
                    if !(3..=5).contains(var) {
                        return Err(OmerfError::validation(
                            "tree function may only split on X4, X5, X6",
                        ));
                    }
                    walk(left)?;
                    walk(right)
                }
            }
        }
        if self.n_leaves() < 2 {
            return Err(OmerfError::validation("tree function needs at least 2 leaves"));
        }
        walk(self)
    }
}

/// n x 7 matrix: X1..X3 ~ N(0,1), X4 ~ U(-3,3), X5 ~ U(-6,6), X6 ~ U(-5,5),
/// X7 ~ U(-4,4).
pub fn sample_covariates(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, STREAM_COVARIATES);
    let half_widths = [3.0, 6.0, 5.0, 4.0];
    let mut x = DMatrix::zeros(n, N_COVARIATES);
    for r in 0..n {
        for c in 0..3 {
            x[(r, c)] = rng.sample(StandardNormal);
        }
        for (k, w) in half_widths.iter().enumerate() {
            x[(r, 3 + k)] = rng.random_range(-w..*w);
        }
    }
    x
}

/// Fixed part of the latent predictor for every row of `x`.
pub fn fixed_effect_latent(x: &DMatrix<f64>, spec: &DgpSpec, tree: &TreeFunctionSpec) -> Vec<f64> {
    (0..x.nrows())
        .map(|r| {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            let (x1, x2, x3) = (row[0], row[1], row[2]);
            match spec.form {
                FixedForm::PolynomialTree => {
                    spec.alpha * (3.0 + 7.0 * x1 * x1 - 5.0 * x2 + x2 * x3 * x3)
                        + spec.beta * tree.eval(&row)
                }
                FixedForm::Linear => 3.0 + 7.0 * x1 - 5.0 * x2 + x2 * x3,
            }
        })
        .collect()
}

/// I x (Q+1) independent normal draws: intercepts with variance `sigma2_1`,
/// slopes (when present) with variance `sigma2_2`.
pub fn sample_random_effects(spec: &DgpSpec, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, STREAM_RANDOM_EFFECTS);
    let sds: Vec<f64> = std::iter::once(spec.sigma2_1)
        .chain(spec.sigma2_2)
        .map(f64::sqrt)
        .collect();
    let mut b = DMatrix::zeros(spec.n_groups, sds.len());
    for i in 0..spec.n_groups {
        for (k, sd) in sds.iter().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            b[(i, k)] = sd * e;
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalDraw {
    pub labels: Vec<u32>,
    pub thresholds: ThresholdVector,
    /// Worst `|mean F(theta_c - w) - c/C|` over thresholds.
    pub residual: f64,
    /// All latent values were equal.
    pub degenerate: bool,
}

/// Thresholds giving balanced expected category shares for latent sample `w`:
/// `mean_j F(theta_c - w_j) = c / C`.
pub fn balanced_thresholds(w: &[f64], n_categories: u32) -> Result<(ThresholdVector, f64)> {
    let n = w.len() as f64;
    let (lo_w, hi_w) = w
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let mut theta = Vec::with_capacity(n_categories as usize - 1);
    let mut worst = 0.0f64;
    for c in 1..n_categories {
        let target = c as f64 / n_categories as f64;
        let g = |t: f64| w.iter().map(|wj| inv_logit(t - wj)).sum::<f64>() / n - target;
        // mean F(t - w) lies between F(t - max w) and F(t - min w)
        let shift = logit(target)?;
        let (mut lo, mut hi) = (lo_w + shift - 1.0, hi_w + shift + 1.0);
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let v = g(mid);
            if v.abs() < 1e-13 || hi - lo < 1e-14 * (1.0 + mid.abs()) {
                break;
            }
            if v < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        worst = worst.max(g(mid).abs());
        theta.push(mid);
    }
    Ok((ThresholdVector::new(theta)?, worst))
}

/// Balanced thresholds for `w`, then `y_j ~ Categorical(category_probs(theta, w_j))`.
pub fn latent_to_ordinal(w: &[f64], n_categories: u32, seed: u64) -> Result<OrdinalDraw> {
    if n_categories < 2 {
        return Err(OmerfError::validation("need C >= 2"));
    }
    if w.len() < n_categories as usize {
        return Err(OmerfError::validation("need at least C latent values"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(OmerfError::validation("latent values must be finite"));
    }
    let degenerate = w.iter().all(|v| *v == w[0]);
    if degenerate {
        log::warn!("constant latent sample; labels are independent of covariates");
    }
    let (thresholds, residual) = balanced_thresholds(w, n_categories)?;
    let mut rng = stream_rng(seed, STREAM_LABELS);
    let labels = w
        .iter()
        .map(|&wj| {
            let u: f64 = rng.random();
            let probs = category_probs(&thresholds, wj);
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return k as u32 + 1;
                }
            }
            n_categories
        })
        .collect();
    Ok(OrdinalDraw {
        labels,
        thresholds,
        residual,
        degenerate,
    })
}

/// Per-group random split: `round((1 - train_ratio) n_i)` rows of each group
/// go to the test set, at least one on each side when `n_i >= 2`.
pub fn stratified_split(group_rows: &[Vec<usize>], train_ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream_rng(seed, STREAM_SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rows in group_rows {
        let mut rows = rows.clone();
        rows.shuffle(&mut rng);
        let n = rows.len();
        let mut n_test = ((1.0 - train_ratio) * n as f64).round() as usize;
        if n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        } else {
            n_test = 0;
        }
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// A simulated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub spec: DgpSpec,
    pub data: GroupedOrdinalDataset,
    /// I x (Q+1) sampled random effects, rows in group order.
    pub b_true: DMatrix<f64>,
    pub fixed: Vec<f64>,
    pub latent: Vec<f64>,
    pub thresholds: ThresholdVector,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Ground truth serialized next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub spec: DgpSpec,
    pub tree: TreeFunctionSpec,
    pub group_labels: Vec<String>,
    pub b_true: Vec<Vec<f64>>,
    pub theta_sim: ThresholdVector,
    pub seed: u64,
}

impl SimulatedData {
    pub fn train(&self) -> Result<GroupedOrdinalDataset> {
        self.data.subset(&self.train_rows)
    }

    pub fn test(&self) -> Result<GroupedOrdinalDataset> {
        self.data.subset(&self.test_rows)
    }

    pub fn truth(&self, tree: &TreeFunctionSpec) -> SimulationTruth {
        SimulationTruth {
            spec: self.spec.clone(),
            tree: tree.clone(),
            group_labels: self.data.group_labels().to_vec(),
            b_true: (0..self.b_true.nrows())
                .map(|i| self.b_true.row(i).iter().copied().collect())
                .collect(),
            theta_sim: self.thresholds.clone(),
            seed: self.spec.seed,
        }
    }
}

pub fn group_label(i: usize, n_groups: usize) -> String {
    let width = n_groups.to_string().len();
    format!("g{:0width$}", i + 1)
}

pub fn generate(spec: &DgpSpec) -> Result<SimulatedData> {
    generate_with(spec, &TreeFunctionSpec::default(), 0.8)
}

/// Assemble covariates, latent process, random effects and labels, plus a
/// group-stratified train/test split.
pub fn generate_with(spec: &DgpSpec, tree: &TreeFunctionSpec, train_ratio: f64) -> Result<SimulatedData> {
    spec.validate()?;
    tree.validate()?;
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(OmerfError::validation("train ratio must be in (0, 1)"));
    }
    let n = spec.n_rows();
    let x = sample_covariates(n, spec.seed);
    let fixed = fixed_effect_latent(&x, spec, tree);
    let b_true = sample_random_effects(spec, spec.seed);
    let q1 = 1 + spec.q_slopes();
    let group: Vec<usize> = (0..n).map(|r| r / spec.n_per_group).collect();
    let z = DMatrix::from_fn(n, q1, |r, k| if k == 0 { 1.0 } else { x[(r, 0)] });
    let latent: Vec<f64> = (0..n)
        .map(|r| {
            let g = group[r];
            fixed[r] + (0..q1).map(|k| z[(r, k)] * b_true[(g, k)]).sum::<f64>()
        })
        .collect();
    let draw = latent_to_ordinal(&latent, spec.n_categories, spec.seed)?;
    let feature_names = (1..=N_COVARIATES).map(|k| format!("x{k}")).collect();
    let mut random_names = vec!["(Intercept)".to_string()];
    if spec.q_slopes() == 1 {
        random_names.push("x1".into());
    }
    let group_labels = (0..spec.n_groups).map(|i| group_label(i, spec.n_groups)).collect();
    let data = GroupedOrdinalDataset::new(
        x,
        z,
        group,
        draw.labels,
        spec.n_categories,
        feature_names,
        random_names,
        group_labels,
    )?;
    let (train_rows, test_rows) = stratified_split(data.group_rows(), train_ratio, spec.seed);
    Ok(SimulatedData {
        spec: spec.clone(),
        data,
        b_true,
        fixed,
        latent,
        thresholds: draw.thresholds,
        train_rows,
        test_rows,
    })
}

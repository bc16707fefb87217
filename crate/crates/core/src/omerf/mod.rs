//! Alternating estimator: a regression forest for the fixed part and an
//! offset-only cumulative link mixed model for thresholds and group effects.

mod init;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use init::{
    class_frequencies, cumulative_from_probs, init_latent, latent_from_probs, marginal_thresholds,
    normalize_probs, InitMode, InitPrediction, InitialLatent, OrdinalInitializer,
};

use crate::clmm::{fit_clmm, ClmmFit, ClmmOptions, ClmmStart, RandomEffectsSpec};
use crate::data::{Design, GroupedOrdinalDataset};
use crate::error::{OmerfError, Result};
use crate::forest::{fit_forest, ForestConfig, RandomForest};
use crate::link::{argmax_category, category_probs, ThresholdVector};

/// Which forest predictions feed the CLMM offset on the training rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetSource {
    InSample,
    /// Out-of-bag, in-sample for rows no tree left out.
    #[default]
    Oob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OmerfConfig {
    /// Stop when the relative change statistic drops below this.
    pub toll: f64,
    pub itmax: usize,
    pub forest_config: ForestConfig,
    /// Guard on the denominator of the relative change.
    pub denominator_floor: f64,
    pub init_prediction: InitPrediction,
    pub offset_source: OffsetSource,
}

impl Default for OmerfConfig {
    fn default() -> Self {
        OmerfConfig {
            toll: 0.05,
            itmax: 100,
            forest_config: ForestConfig::default(),
            denominator_floor: 1e-4,
            init_prediction: InitPrediction::default(),
            offset_source: OffsetSource::default(),
        }
    }
}

impl OmerfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.toll > 0.0) {
            return Err(OmerfError::validation("toll must be > 0"));
        }
        if self.itmax == 0 {
            return Err(OmerfError::validation("itmax must be >= 1"));
        }
        if !(self.denominator_floor > 0.0) {
            return Err(OmerfError::validation("denominator_floor must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmerfModel {
    pub forest: RandomForest,
    pub clmm: ClmmFit,
    pub eta0: Vec<f64>,
    pub theta0: ThresholdVector,
    /// Target of the last forest fit, `eta0 - z b_prev`.
    pub forest_target: Vec<f64>,
    /// Relative change statistic per iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub feature_names: Vec<String>,
    pub config: OmerfConfig,
}

/// `max |b - b_prev| / max(|b_prev at the argmax|, floor)`. The first
/// maximal entry in row-major order is the argmax.
pub fn relative_change(b: &DMatrix<f64>, b_prev: &DMatrix<f64>, floor: f64) -> f64 {
    let mut best = (0.0, 0.0);
    let mut found = false;
    for i in 0..b.nrows() {
        for q in 0..b.ncols() {
            let d = (b[(i, q)] - b_prev[(i, q)]).abs();
            if !found || d > best.0 {
                best = (d, b_prev[(i, q)]);
                found = true;
            }
        }
    }
    best.0 / best.1.abs().max(floor)
}

fn forest_offset(forest: &RandomForest, x: &DMatrix<f64>, source: OffsetSource) -> Result<Vec<f64>> {
    let fitted = forest.predict(x)?;
    if source == OffsetSource::InSample || !forest.config.bootstrap {
        return Ok(fitted);
    }
    let oob = forest.oob_predict(x)?;
    Ok(oob
        .values
        .iter()
        .zip(&oob.covered)
        .zip(&fitted)
        .map(|((v, c), f)| if *c { *v } else { *f })
        .collect())
}

/// Fit the model. Each iteration grows a forest on the initial latent score
/// with the current group effects removed, then refits an offset-only CLMM
/// on the forest predictions. `b0` (I x (Q+1)) replaces the zero starting
/// effects.
pub fn fit_omerf(
    data: &GroupedOrdinalDataset,
    spec: RandomEffectsSpec,
    config: &OmerfConfig,
    b0: Option<&DMatrix<f64>>,
) -> Result<OmerfModel> {
    config.validate()?;
    spec.check(data)?;
    let d = spec.n_effects();
    let n_groups = data.n_groups();
    if let Some(b) = b0 {
        if b.nrows() != n_groups || b.ncols() != d {
            return Err(OmerfError::dim(format!(
                "starting effects are {}x{}, expected {n_groups}x{d}",
                b.nrows(),
                b.ncols()
            )));
        }
    }
    let init = init_latent(
        data.x(),
        data.y(),
        data.n_categories(),
        &config.forest_config,
        config.init_prediction,
    )?;

    let z = data.z();
    let mut b_prev = b0.cloned().unwrap_or_else(|| DMatrix::zeros(n_groups, d));
    let mut trace = Vec::new();
    let mut options = ClmmOptions::default();
    let mut last: Option<(RandomForest, ClmmFit, Vec<f64>)> = None;
    let mut converged = false;

    for it in 1..=config.itmax {
        let target: Vec<f64> = (0..data.n_rows())
            .map(|r| {
                let g = data.group()[r];
                init.eta0[r] - (0..d).map(|k| z[(r, k)] * b_prev[(g, k)]).sum::<f64>()
            })
            .collect();
        let forest = fit_forest(data.x(), &target, &config.forest_config)?;
        let offset = forest_offset(&forest, data.x(), config.offset_source)?;
        let clmm = fit_clmm(data, spec, Some(&offset), false, &options).map_err(|e| match e {
            OmerfError::Convergence { context, loglik } => OmerfError::Convergence {
                context: format!("iteration {it}: {context}"),
                loglik,
            },
            other => other,
        })?;
        let b = clmm.modes_matrix();
        let tr = relative_change(&b, &b_prev, config.denominator_floor);
        trace.push(tr);
        log::debug!("iteration {it}: tr = {tr:.6}, sigma2 = {:?}", clmm.sigma2);
        options.start = Some(ClmmStart {
            theta: clmm.theta.clone(),
            beta: None,
            log_sd: clmm.sigma2.iter().map(|s| 0.5 * s.max(1e-24).ln()).collect(),
        });
        b_prev = b;
        last = Some((forest, clmm, target));
        if tr < config.toll {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "no convergence after {} iterations (last change {:.4})",
            config.itmax,
            trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    let (forest, clmm, forest_target) = last.expect("itmax >= 1");
    Ok(OmerfModel {
        forest,
        clmm,
        eta0: init.eta0,
        theta0: init.theta0,
        forest_target,
        iterations: trace.len(),
        trace,
        converged,
        feature_names: data.feature_names().to_vec(),
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalPrediction {
    /// `f(x) + z b`, the latent score.
    pub latent: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
    pub class: Vec<u32>,
}

impl OrdinalPrediction {
    pub fn from_latent(theta: &ThresholdVector, latent: Vec<f64>) -> Self {
        let probs: Vec<Vec<f64>> = latent.iter().map(|l| category_probs(theta, *l)).collect();
        let class = probs.iter().map(|p| argmax_category(p)).collect();
        OrdinalPrediction { latent, probs, class }
    }
}

impl OmerfModel {
    /// Latent scores and class probabilities; groups unseen in training get
    /// zero random effects.
    pub fn predict(&self, x: &DMatrix<f64>, z: &DMatrix<f64>, groups: &[String]) -> Result<OrdinalPrediction> {
        if x.nrows() != z.nrows() || x.nrows() != groups.len() {
            return Err(OmerfError::dim("x, z and group lengths differ"));
        }
        let f = self.forest.predict(x)?;
        let latent = self.clmm.latent(x, z, groups, Some(&f))?;
        Ok(OrdinalPrediction::from_latent(&self.clmm.theta, latent))
    }

    pub fn predict_design(&self, design: &Design) -> Result<OrdinalPrediction> {
        self.predict(&design.x, &design.z, &design.group_labels)
    }

    pub fn random_effects(&self) -> Vec<RandomEffectRow> {
        random_effects_table(&self.clmm)
    }
}

pub fn predict_omerf(
    model: &OmerfModel,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    groups: &[String],
) -> Result<OrdinalPrediction> {
    model.predict(x, z, groups)
}

/// One conditional mode with a normal-approximation 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectRow {
    pub group: String,
    pub term: String,
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Conditional modes sorted by group label, terms in model order.
pub fn random_effects_table(fit: &ClmmFit) -> Vec<RandomEffectRow> {
    let mut order: Vec<usize> = (0..fit.group_labels.len()).collect();
    order.sort_by(|a, b| fit.group_labels[*a].cmp(&fit.group_labels[*b]));
    let mut rows = Vec::with_capacity(order.len() * fit.random_names.len());
    for i in order {
        for (k, term) in fit.random_names.iter().enumerate() {
            let (est, sd) = (fit.b_modes[i][k], fit.b_sd[i][k]);
            rows.push(RandomEffectRow {
                group: fit.group_labels[i].clone(),
                term: term.clone(),
                estimate: est,
                sd,
                lower: est - 1.96 * sd,
                upper: est + 1.96 * sd,
            });
        }
    }
    rows
}

pub fn extract_random_effects(model: &OmerfModel) -> Vec<RandomEffectRow> {
    model.random_effects()
}

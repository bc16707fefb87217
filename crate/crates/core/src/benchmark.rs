//! Replicated simulation benchmark: generate, split, fit each model on the
//! training rows, score on the test rows, then aggregate per design and model.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clmm::{fit_clm, fit_clmm, ClmmFit, ClmmOptions, RandomEffectsSpec};
use crate::data::GroupedOrdinalDataset;
use crate::error::{OmerfError, Result};
use crate::forest::{permutation_importance, rank_desc, ForestConfig};
use crate::metrics::{evaluate, pearson, summarize, Summary, METRIC_NAMES};
use crate::omerf::{fit_omerf, marginal_thresholds, OmerfConfig, OrdinalInitializer};
use crate::par;
use crate::persist::{FittedModel, ModelKind, OrdforestModel};
use crate::seeding::derive_seed;
use crate::sim::{generate_with, DgpSpec, SimulatedData, TreeFunctionSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkPlan {
    pub dgps: Vec<u32>,
    pub replications: usize,
    pub models: Vec<ModelKind>,
    pub train_ratio: f64,
    pub master_seed: u64,
    pub n_groups: usize,
    pub n_per_group: usize,
    pub omerf: OmerfConfig,
    /// Forest settings for the standalone `ordforest-init` classifier.
    pub ordforest: ForestConfig,
    pub tree: TreeFunctionSpec,
    /// Record the permutation-importance rank of the last covariate for OMERF.
    pub importance: bool,
    pub importance_repeats: usize,
}

impl Default for BenchmarkPlan {
    fn default() -> Self {
        BenchmarkPlan {
            dgps: (1..=10).collect(),
            replications: 100,
            models: ModelKind::ALL.to_vec(),
            train_ratio: 0.8,
            master_seed: 0,
            n_groups: 10,
            n_per_group: 100,
            omerf: OmerfConfig::default(),
            ordforest: ForestConfig::default(),
            tree: TreeFunctionSpec::default(),
            importance: false,
            importance_repeats: 1,
        }
    }
}

impl BenchmarkPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(OmerfError::validation("replications must be >= 1"));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(OmerfError::validation("train ratio must be in (0, 1)"));
        }
        if self.dgps.is_empty() || self.models.is_empty() {
            return Err(OmerfError::validation("plan needs at least one DGP and one model"));
        }
        for &id in &self.dgps {
            DgpSpec::table(id, 0)?;
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return Err(OmerfError::validation("models listed twice"));
        }
        self.omerf.validate()?;
        self.tree.validate()
    }

    pub fn replication_seed(&self, dgp: u32, replication: usize) -> u64 {
        derive_seed(self.master_seed, &[u64::from(dgp), replication as u64])
    }

    fn spec(&self, dgp: u32, replication: usize) -> Result<DgpSpec> {
        Ok(DgpSpec {
            n_groups: self.n_groups,
            n_per_group: self.n_per_group,
            ..DgpSpec::table(dgp, self.replication_seed(dgp, replication))?
        })
    }
}

/// One model on one replication. Metric fields are empty for failed fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub dgp: u32,
    pub replication: usize,
    pub seed: u64,
    pub model: ModelKind,
    pub status: String,
    pub n_test: Option<usize>,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
    pub ari: Option<f64>,
    pub kappa: Option<f64>,
    pub kappa_degenerate: Option<bool>,
    /// Correlation of estimated and sampled random intercepts.
    pub b_corr: Option<f64>,
    /// Permutation-importance rank of the last covariate (1 = most important).
    pub last_feature_rank: Option<usize>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

impl ReplicationRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => self.accuracy,
            "mse" => self.mse,
            "ari" => self.ari,
            "kappa" => self.kappa,
            "b_corr" => self.b_corr,
            "last_feature_rank" => self.last_feature_rank.map(|r| r as f64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dgp: u32,
    pub model: ModelKind,
    pub metric: String,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub rows: Vec<ReplicationRow>,
    pub aggregate: Vec<AggregateRow>,
    pub failures: usize,
}

struct Outcome {
    model: FittedModel,
    b_corr: Option<f64>,
    last_feature_rank: Option<usize>,
    iterations: Option<usize>,
    converged: Option<bool>,
}

fn intercept_corr(fit: &ClmmFit, sim: &SimulatedData) -> Option<f64> {
    let labels = sim.data.group_labels();
    let mut est = Vec::new();
    let mut truth = Vec::new();
    for (i, g) in labels.iter().enumerate() {
        if let Some(m) = fit.modes_for(g) {
            est.push(m[0]);
            truth.push(sim.b_true[(i, 0)]);
        }
    }
    let r = pearson(&est, &truth);
    r.is_finite().then_some(r)
}

pub(crate) fn model_seed(replication_seed: u64, kind: ModelKind) -> u64 {
    derive_seed(replication_seed, &[100 + kind.stream()])
}

fn fit_model(
    kind: ModelKind,
    plan: &BenchmarkPlan,
    sim: &SimulatedData,
    train: &GroupedOrdinalDataset,
    spec: RandomEffectsSpec,
) -> Result<Outcome> {
    let seed = model_seed(sim.spec.seed, kind);
    let plain = |model| Outcome {
        model,
        b_corr: None,
        last_feature_rank: None,
        iterations: None,
        converged: None,
    };
    match kind {
        ModelKind::Clm => {
            let fit = fit_clm(train)?;
            let converged = Some(fit.converged);
            Ok(Outcome { converged, ..plain(FittedModel::Clm(fit)) })
        }
        ModelKind::Clmm => {
            let fit = fit_clmm(train, spec, None, true, &ClmmOptions::default())?;
            Ok(Outcome {
                b_corr: intercept_corr(&fit, sim),
                iterations: Some(fit.iterations),
                converged: Some(fit.converged),
                ..plain(FittedModel::Clmm(fit))
            })
        }
        ModelKind::OrdforestInit => {
            let cfg = plan.ordforest.clone().with_seed(seed);
            let c = train.n_categories();
            let initializer = OrdinalInitializer::fit(train.x(), train.y(), c, &cfg)?;
            let theta0 = marginal_thresholds(train.y(), c)?;
            Ok(plain(FittedModel::OrdforestInit(OrdforestModel { initializer, theta0 })))
        }
        ModelKind::Omerf => {
            let mut cfg = plan.omerf.clone();
            cfg.forest_config.seed = seed;
            let model = fit_omerf(train, spec, &cfg, None)?;
            if !model.converged {
                log::warn!(
                    "dgp {} seed {}: OMERF stopped at itmax={} without converging",
                    sim.spec.id,
                    sim.spec.seed,
                    cfg.itmax
                );
            }
            let last_feature_rank = if plan.importance && train.n_features() > 0 {
                let imp = permutation_importance(
                    &model.forest,
                    train.x(),
                    &model.forest_target,
                    plan.importance_repeats,
                    derive_seed(sim.spec.seed, &[200]),
                )?;
                rank_desc(&imp.importance).last().copied()
            } else {
                None
            };
            Ok(Outcome {
                b_corr: intercept_corr(&model.clmm, sim),
                last_feature_rank,
                iterations: Some(model.iterations),
                converged: Some(model.converged),
                ..plain(FittedModel::Omerf(Box::new(model)))
            })
        }
    }
}

fn failed_row(dgp: u32, replication: usize, seed: u64, model: ModelKind, err: &OmerfError) -> ReplicationRow {
    ReplicationRow {
        dgp,
        replication,
        seed,
        model,
        status: "failed".into(),
        n_test: None,
        accuracy: None,
        mse: None,
        ari: None,
        kappa: None,
        kappa_degenerate: None,
        b_corr: None,
        last_feature_rank: None,
        iterations: None,
        converged: None,
        error: Some(err.to_string()),
    }
}

/// All models of the plan on one simulated replication.
pub fn run_replication(plan: &BenchmarkPlan, dgp: u32, replication: usize) -> Vec<ReplicationRow> {
    let seed = plan.replication_seed(dgp, replication);
    let prepared = plan
        .spec(dgp, replication)
        .and_then(|spec| generate_with(&spec, &plan.tree, plan.train_ratio))
        .and_then(|sim| {
            let train = sim.train()?;
            let test = sim.test()?;
            Ok((sim, train, test))
        });
    let (sim, train, test) = match prepared {
        Ok(p) => p,
        Err(e) => {
            return plan.models.iter().map(|&m| failed_row(dgp, replication, seed, m, &e)).collect();
        }
    };
    let spec = RandomEffectsSpec { q_slopes: sim.spec.q_slopes() };
    let design = test.design();
    plan.models
        .iter()
        .map(|&kind| {
            let scored = fit_model(kind, plan, &sim, &train, spec).and_then(|out| {
                let pred = out.model.predict(&design)?;
                let report = evaluate(test.y(), &pred.class, kind.name(), &format!("dgp{dgp}"))?;
                Ok((out, report))
            });
            match scored {
                Ok((out, r)) => ReplicationRow {
                    dgp,
                    replication,
                    seed,
                    model: kind,
                    status: "ok".into(),
                    n_test: Some(r.n),
                    accuracy: Some(r.accuracy),
                    mse: Some(r.mse),
                    ari: Some(r.ari),
                    kappa: Some(r.kappa),
                    kappa_degenerate: Some(r.kappa_degenerate),
                    b_corr: out.b_corr,
                    last_feature_rank: out.last_feature_rank,
                    iterations: out.iterations,
                    converged: out.converged,
                    error: None,
                },
                Err(e) => {
                    log::warn!("dgp {dgp} replication {replication} {kind}: {e}");
                    failed_row(dgp, replication, seed, kind, &e)
                }
            }
        })
        .collect()
}

/// Mean and variance per (dgp, model, metric) over successful rows. Output
/// follows the plan's DGP order, then model order, then metric order.
pub fn aggregate_rows(plan: &BenchmarkPlan, rows: &[ReplicationRow]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for &dgp in &plan.dgps {
        for &model in &plan.models {
            let subset: Vec<&ReplicationRow> =
                rows.iter().filter(|r| r.dgp == dgp && r.model == model && r.ok()).collect();
            if subset.is_empty() {
                continue;
            }
            for metric in METRIC_NAMES {
                let values: Vec<f64> = subset.iter().filter_map(|r| r.metric(metric)).collect();
                let Summary { mean, variance, .. } = summarize(&values);
                out.push(AggregateRow {
                    dgp,
                    model,
                    metric: metric.to_string(),
                    mean,
                    variance,
                });
            }
        }
    }
    out
}

pub fn run_benchmark(plan: &BenchmarkPlan) -> Result<BenchmarkResult> {
    plan.validate()?;
    let jobs: Vec<(u32, usize)> = plan
        .dgps
        .iter()
        .flat_map(|&d| (0..plan.replications).map(move |r| (d, r)))
        .collect();
    let rows: Vec<ReplicationRow> = par::map_slice(&jobs, |&(d, r)| run_replication(plan, d, r))
        .into_iter()
        .flatten()
        .collect();
    let failures = rows.iter().filter(|r| !r.ok()).count();
    let aggregate = aggregate_rows(plan, &rows);
    Ok(BenchmarkResult { rows, aggregate, failures })
}

/// Successful-row counts per (dgp, model), for reporting.
pub fn success_counts(rows: &[ReplicationRow]) -> BTreeMap<(u32, ModelKind), usize> {
    let mut counts = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ok()) {
        *counts.entry((r.dgp, r.model)).or_default() += 1;
    }
    counts
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => OmerfError::io(path, io),
        other => OmerfError::validation(format!("{}: {other:?}", path.display())),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| OmerfError::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => OmerfError::io(path, io),
        other => OmerfError::validation(format!("{}: {other:?}", path.display())),
    })?;
    r.deserialize().map(|row| row.map_err(OmerfError::from)).collect()
}

pub fn write_replications(path: &Path, rows: &[ReplicationRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_replications(path: &Path) -> Result<Vec<ReplicationRow>> {
    read_csv(path)
}

/// Columns `dgp, model, metric, mean, variance`.
pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    read_csv(path)
}

use std::fs;
use std::path::{Path, PathBuf};

use omerf::benchmark::{run_benchmark, success_counts, write_aggregate, write_replications};
use omerf::clmm::{fit_clm, fit_clmm, ClmmOptions, RandomEffectsSpec};
use omerf::data::{load_dataset, load_design, Design, GroupedOrdinalDataset, Schema};
use omerf::forest::{partial_dependence, permutation_importance, rank_desc, ForestConfig};
use omerf::metrics::{evaluate, MetricsReport};
use omerf::omerf::{fit_omerf, marginal_thresholds, random_effects_table, OrdinalInitializer};
use omerf::persist::{FittedModel, ModelFile, ModelKind, OrdforestModel};
use omerf::sim::{generate_with, DgpSpec, TreeFunctionSpec};
use omerf::{OmerfError, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{write_json, Manifest, RunConfig};

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<OmerfError> for CliError {
    fn from(e: OmerfError) -> Self {
        let code = match &e {
            OmerfError::Io { .. } => 1,
            OmerfError::Csv(c) if c.is_io_error() => 1,
            OmerfError::Convergence { .. } => 3,
            _ => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub struct Output {
    dir: PathBuf,
    manifest: Manifest,
}

impl Output {
    pub fn new(command: &str, inputs: Map<String, Value>, config: &RunConfig) -> Result<Self> {
        let dir = config.out_dir();
        fs::create_dir_all(&dir).map_err(|e| OmerfError::io(&dir, e))?;
        Ok(Output {
            dir,
            manifest: Manifest::new(command, inputs, config),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, value)
    }

    fn csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p).map_err(OmerfError::from)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush().map_err(|e| OmerfError::io(&p, e))
    }

    pub fn finish(self) -> Result<()> {
        self.manifest.write(&self.dir)
    }
}

fn inputs(pairs: &[(&str, Value)]) -> Map<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn headers(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn simulate(config: &RunConfig) -> CliResult<()> {
    let sc = &config.simulate;
    let dgp = sc
        .dgp
        .ok_or_else(|| CliError { code: 2, message: "simulate needs --dgp".into() })?;
    let spec = DgpSpec {
        n_groups: sc.n_groups,
        n_per_group: sc.n_per_group,
        n_categories: sc.categories,
        ..DgpSpec::table(dgp, config.seed())?
    };
    let tree = TreeFunctionSpec::default();
    let sim = generate_with(&spec, &tree, sc.train_ratio)?;
    let mut out = Output::new("simulate", Map::new(), config)?;
    let p = out.path("data.csv");
    sim.data.write_csv(&p)?;
    let p = out.path("train.csv");
    sim.train()?.write_csv(&p)?;
    let p = out.path("test.csv");
    sim.test()?.write_csv(&p)?;
    let mut split: Vec<(usize, &str)> = sim.train_rows.iter().map(|r| (*r, "train")).collect();
    split.extend(sim.test_rows.iter().map(|r| (*r, "test")));
    split.sort_unstable();
    out.csv(
        "split.csv",
        &headers(&["row", "set"]),
        split.into_iter().map(|(r, s)| vec![r.to_string(), s.to_string()]),
    )?;
    out.json("truth.json", &sim.truth(&tree))?;
    out.json("schema.json", &spec.schema())?;
    out.finish()?;
    eprintln!("wrote {} rows for DGP {dgp} to {}", sim.data.n_rows(), config.out_dir().display());
    Ok(())
}

fn load_schema(path: &Path) -> Result<Schema> {
    Schema::from_json_file(path)
}

fn named(names: &[String], values: &[f64]) -> Value {
    Value::Object(names.iter().cloned().zip(values.iter().map(|v| json!(v))).collect())
}

fn fit_summary(model: &FittedModel, data: &GroupedOrdinalDataset) -> Value {
    let mut s = match model {
        FittedModel::Clm(f) => json!({
            "loglik": f.loglik,
            "theta": f.theta.as_slice(),
            "beta": named(&f.feature_names, &f.beta),
            "converged": f.converged,
            "iterations": f.iterations,
            "separation": f.separation,
        }),
        FittedModel::Clmm(f) => json!({
            "loglik": f.marginal_loglik,
            "theta": f.theta.as_slice(),
            "beta": f.beta.as_ref().map(|b| named(&f.feature_names, b)),
            "sigma2": named(&f.random_names, &f.sigma2),
            "icc": f.icc(),
            "converged": f.converged,
            "iterations": f.iterations,
            "single_group": f.single_group,
        }),
        FittedModel::OrdforestInit(m) => json!({
            "num_trees": m.initializer.forests.first().map_or(0, |f| f.trees.len()),
            "theta0": m.theta0.as_slice(),
        }),
        FittedModel::Omerf(m) => json!({
            "loglik": m.clmm.marginal_loglik,
            "theta": m.clmm.theta.as_slice(),
            "sigma2": named(&m.clmm.random_names, &m.clmm.sigma2),
            "icc": m.clmm.icc(),
            "converged": m.converged,
            "iterations": m.iterations,
            "trace": m.trace,
        }),
    };
    if let Value::Object(map) = &mut s {
        map.insert("model".into(), json!(model.kind().name()));
        map.insert("n".into(), json!(data.n_rows()));
        map.insert("n_groups".into(), json!(data.n_groups()));
        map.insert("n_categories".into(), json!(data.n_categories()));
    }
    s
}

pub fn fit(config: &RunConfig, kind: ModelKind, data_path: &Path, schema_path: &Path) -> CliResult<()> {
    let schema = load_schema(schema_path)?;
    let data = load_dataset(data_path, &schema)?;
    let spec = RandomEffectsSpec { q_slopes: schema.random_slopes.len() };
    let seed = config.seed();
    let model = match kind {
        ModelKind::Clm => FittedModel::Clm(fit_clm(&data)?),
        ModelKind::Clmm => FittedModel::Clmm(fit_clmm(&data, spec, None, true, &ClmmOptions::default())?),
        ModelKind::OrdforestInit => {
            let cfg = ForestConfig { seed, ..config.omerf.forest_config.clone() };
            let c = data.n_categories();
            FittedModel::OrdforestInit(OrdforestModel {
                initializer: OrdinalInitializer::fit(data.x(), data.y(), c, &cfg)?,
                theta0: marginal_thresholds(data.y(), c)?,
            })
        }
        ModelKind::Omerf => {
            let mut cfg = config.omerf.clone();
            cfg.forest_config.seed = seed;
            FittedModel::Omerf(Box::new(fit_omerf(&data, spec, &cfg, None)?))
        }
    };
    let summary = fit_summary(&model, &data);
    let not_converged = match &model {
        FittedModel::Omerf(m) => !m.converged,
        FittedModel::Clm(f) => !f.converged,
        _ => false,
    };
    let mut out = Output::new(
        "fit",
        inputs(&[
            ("model", json!(kind.name())),
            ("data", path_value(data_path)),
            ("schema", path_value(schema_path)),
        ]),
        config,
    )?;
    let p = out.path("model.json");
    ModelFile::new(model, schema, data.n_categories()).save(&p)?;
    out.json("summary.json", &summary)?;
    out.finish()?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(OmerfError::from)?);
    if not_converged {
        return Err(CliError {
            code: 3,
            message: format!("{kind} fit did not converge; model written anyway"),
        });
    }
    Ok(())
}

fn load_for_model(model: &ModelFile, data_path: &Path, schema_path: Option<&Path>) -> Result<Design> {
    let schema = match schema_path {
        Some(p) => load_schema(p)?,
        None => model.schema.clone(),
    };
    load_design(data_path, &schema)
}

pub fn predict(config: &RunConfig, model_path: &Path, data_path: &Path, schema_path: Option<&Path>) -> CliResult<()> {
    let model = ModelFile::load(model_path)?;
    let design = load_for_model(&model, data_path, schema_path)?;
    let pred = model.model.predict(&design)?;
    let c = model.n_categories as usize;
    let mut header = headers(&["row", "class"]);
    header.extend((1..=c).map(|k| format!("p{k}")));
    let mut out = Output::new(
        "predict",
        inputs(&[("model", path_value(model_path)), ("data", path_value(data_path))]),
        config,
    )?;
    out.csv(
        "predictions.csv",
        &header,
        pred.class.iter().zip(&pred.probs).enumerate().map(|(r, (cl, p))| {
            let mut rec = vec![r.to_string(), cl.to_string()];
            rec.extend(p.iter().map(|v| v.to_string()));
            rec
        }),
    )?;
    out.finish()?;
    eprintln!("wrote {} predictions", pred.class.len());
    Ok(())
}

fn read_prediction_classes(path: &Path) -> Result<Vec<u32>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let col = header
        .iter()
        .position(|h| h == "class")
        .ok_or_else(|| OmerfError::Schema(format!("{}: no 'class' column", path.display())))?;
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            rec[col].trim().parse::<u32>().map_err(|e| OmerfError::Parse {
                row: i + 1,
                column: "class".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub struct EvaluateArgs<'a> {
    pub model: Option<&'a Path>,
    pub predictions: Option<&'a Path>,
    pub data: &'a Path,
    pub schema: Option<&'a Path>,
}

pub fn evaluate_cmd(config: &RunConfig, args: EvaluateArgs<'_>) -> CliResult<()> {
    let (name, classes, truth) = match (args.model, args.predictions) {
        (Some(m), None) => {
            let model = ModelFile::load(m)?;
            let design = load_for_model(&model, args.data, args.schema)?;
            let pred = model.model.predict(&design)?;
            (model.model.kind().name().to_string(), pred.class, design.y)
        }
        (None, Some(p)) => {
            let schema_path = args.schema.ok_or_else(|| CliError {
                code: 2,
                message: "evaluate --predictions needs --schema for the data file".into(),
            })?;
            let design = load_design(args.data, &load_schema(schema_path)?)?;
            ("predictions".to_string(), read_prediction_classes(p)?, design.y)
        }
        _ => {
            return Err(CliError {
                code: 2,
                message: "evaluate needs exactly one of --model or --predictions".into(),
            })
        }
    };
    let truth = truth.ok_or_else(|| CliError {
        code: 2,
        message: "data file has no label column to evaluate against".into(),
    })?;
    let dataset = args.data.file_stem().map_or("data".into(), |s| s.to_string_lossy().to_string());
    let report: MetricsReport = evaluate(&truth, &classes, &name, &dataset)?;
    let mut inp = vec![("data", path_value(args.data))];
    if let Some(m) = args.model {
        inp.push(("model", path_value(m)));
    }
    if let Some(p) = args.predictions {
        inp.push(("predictions", path_value(p)));
    }
    let mut out = Output::new("evaluate", inputs(&inp), config)?;
    out.json("metrics.json", &report)?;
    out.csv(
        "metrics.csv",
        &headers(&["model", "dataset", "n", "accuracy", "mse", "ari", "kappa"]),
        [vec![
            report.model.clone(),
            report.dataset.clone(),
            report.n.to_string(),
            report.accuracy.to_string(),
            report.mse.to_string(),
            report.ari.to_string(),
            report.kappa.to_string(),
        ]],
    )?;
    out.finish()?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(OmerfError::from)?);
    Ok(())
}

pub fn benchmark(config: &RunConfig) -> CliResult<()> {
    let mut plan = config.benchmark.clone();
    plan.master_seed = config.seed();
    let result = run_benchmark(&plan)?;
    let mut out = Output::new("benchmark", Map::new(), config)?;
    let p = out.path("replications.csv");
    write_replications(&p, &result.rows)?;
    let p = out.path("aggregate.csv");
    write_aggregate(&p, &result.aggregate)?;
    let counts = success_counts(&result.rows);
    let summary: Vec<Value> = plan
        .dgps
        .iter()
        .flat_map(|&d| plan.models.iter().map(move |&m| (d, m)))
        .map(|(d, m)| {
            let ok = counts.get(&(d, m)).copied().unwrap_or(0);
            json!({"dgp": d, "model": m.name(), "ok": ok, "failed": plan.replications - ok})
        })
        .collect();
    out.json("failures.json", &json!({"failures": result.failures, "by_design": summary}))?;
    out.finish()?;
    eprintln!(
        "{} replication rows, {} failed; aggregate in {}",
        result.rows.len(),
        result.failures,
        config.out_dir().join("aggregate.csv").display()
    );
    Ok(())
}

fn grid(values: impl Iterator<Item = f64>, points: usize) -> Vec<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if points <= 1 || lo == hi {
        return vec![lo];
    }
    (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect()
}

pub fn explain(config: &RunConfig, model_path: &Path, data_path: &Path, schema_path: Option<&Path>) -> CliResult<()> {
    let model = ModelFile::load(model_path)?;
    let design = load_for_model(&model, data_path, schema_path)?;
    let ec = &config.explain;
    let mut out = Output::new(
        "explain",
        inputs(&[("model", path_value(model_path)), ("data", path_value(data_path))]),
        config,
    )?;
    let clmm = match &model.model {
        FittedModel::Omerf(m) => {
            if design.n_rows() != m.forest.n_train {
                return Err(CliError {
                    code: 2,
                    message: format!(
                        "explain needs the {} training rows the model was fitted on, got {}",
                        m.forest.n_train,
                        design.n_rows()
                    ),
                });
            }
            let imp = permutation_importance(&m.forest, &design.x, &m.forest_target, ec.importance_repeats, config.seed())?;
            let ranks = rank_desc(&imp.importance);
            out.csv(
                "importance.csv",
                &headers(&["feature", "importance", "rank"]),
                m.feature_names
                    .iter()
                    .zip(imp.importance.iter().zip(&ranks))
                    .map(|(f, (v, r))| vec![f.clone(), v.to_string(), r.to_string()]),
            )?;
            let mut pd_rows = Vec::new();
            for (p, f) in m.feature_names.iter().enumerate() {
                let g = grid(design.x.column(p).iter().copied(), ec.grid_points);
                for (v, pd) in partial_dependence(&m.forest, &design.x, p, &g)? {
                    pd_rows.push(vec![f.clone(), v.to_string(), pd.to_string()]);
                }
            }
            out.csv("partial_dependence.csv", &headers(&["feature", "grid_value", "pd_value"]), pd_rows)?;
            &m.clmm
        }
        FittedModel::Clmm(f) => f,
        other => {
            return Err(CliError {
                code: 2,
                message: format!("explain supports omerf and clmm models, not {}", other.kind()),
            })
        }
    };
    out.csv(
        "random_effects.csv",
        &headers(&["group", "term", "estimate", "sd", "lower", "upper"]),
        random_effects_table(clmm).into_iter().map(|r| {
            vec![
                r.group,
                r.term,
                r.estimate.to_string(),
                r.sd.to_string(),
                r.lower.to_string(),
                r.upper.to_string(),
            ]
        }),
    )?;
    out.finish()?;
    eprintln!("wrote explanation files to {}", config.out_dir().display());
    Ok(())
}

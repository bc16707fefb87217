mod common;

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use omerf::clmm::{ClmmFit, RandomEffectsSpec};
use omerf::forest::{ForestConfig, Node, RandomForest, RegressionTree};
use omerf::link::{cumulative_probs, ThresholdVector};
use omerf::omerf::*;
use omerf::sim::{generate, DgpSpec};

fn small_config() -> OmerfConfig {
    OmerfConfig {
        forest_config: ForestConfig { num_trees: 200, ..ForestConfig::default() },
        ..OmerfConfig::default()
    }
}

fn constant_forest(value: f64, p: usize) -> RandomForest {
    RandomForest {
        trees: vec![RegressionTree { nodes: vec![Node::Leaf { value }] }],
        oob_rows: vec![vec![]],
        config: ForestConfig { num_trees: 1, bootstrap: false, ..ForestConfig::default() },
        n_features: p,
        n_train: 2,
    }
}

fn hand_model(theta: Vec<f64>, modes: Vec<f64>, f: f64) -> OmerfModel {
    let groups: Vec<String> = (0..modes.len()).map(|i| format!("g{i}")).collect();
    let clmm = ClmmFit {
        theta: ThresholdVector::new(theta.clone()).unwrap(),
        beta: None,
        feature_names: vec![],
        sigma2: vec![1.0],
        random_names: vec!["(Intercept)".into()],
        group_labels: groups,
        b_modes: modes.iter().map(|m| vec![*m]).collect(),
        b_sd: modes.iter().map(|_| vec![0.1]).collect(),
        marginal_loglik: 0.0,
        offset_used: true,
        iterations: 0,
        evaluations: 0,
        converged: true,
        starts_tried: 1,
        single_group: false,
    };
    OmerfModel {
        forest: constant_forest(f, 1),
        clmm,
        eta0: vec![],
        theta0: ThresholdVector::new(theta).unwrap(),
        forest_target: vec![],
        trace: vec![0.0],
        converged: true,
        iterations: 1,
        feature_names: vec!["x".into()],
        config: OmerfConfig::default(),
    }
}

#[test]
fn unseen_group_uses_population_level() {
    let m = hand_model(vec![-1.0, 1.0], vec![2.0], 0.0);
    let x = DMatrix::from_element(1, 1, 0.3);
    let z = DMatrix::from_element(1, 1, 1.0);
    let p = m.predict(&x, &z, &["new".to_string()]).unwrap();
    assert_abs_diff_eq!(p.probs[0][0], 0.26894, epsilon = 1e-5);
    assert_abs_diff_eq!(p.probs[0][1], 0.46212, epsilon = 1e-5);
    assert_abs_diff_eq!(p.probs[0][2], 0.26894, epsilon = 1e-5);
    assert_eq!(p.class, vec![2]);
    let known = m.predict(&x, &z, &["g0".to_string()]).unwrap();
    assert_eq!(known.latent, vec![2.0]);
}

#[test]
fn larger_group_effect_shifts_mass_upward() {
    let modes: Vec<f64> = (0..8).map(|k| -2.0 + 0.7 * k as f64).collect();
    let m = hand_model(vec![-1.0, 0.5, 2.0], modes.clone(), 0.4);
    let x = DMatrix::from_element(8, 1, 0.0);
    let z = DMatrix::from_element(8, 1, 1.0);
    let groups: Vec<String> = (0..8).map(|i| format!("g{i}")).collect();
    let p = m.predict(&x, &z, &groups).unwrap();
    for w in p.latent.windows(2) {
        assert!(w[1] > w[0]);
    }
    for k in 1..8 {
        let a = cumulative_probs(&m.clmm.theta, p.latent[k - 1]);
        let b = cumulative_probs(&m.clmm.theta, p.latent[k]);
        assert!(a.iter().zip(&b).all(|(u, v)| v < u));
    }
}

#[test]
fn shift_of_forest_and_thresholds_keeps_classes() {
    let modes = vec![-1.2, 0.0, 0.9];
    let a = hand_model(vec![-0.5, 0.8], modes.clone(), 0.3);
    let b = hand_model(vec![1.5, 2.8], modes, 2.3);
    let x = DMatrix::from_element(3, 1, 0.0);
    let z = DMatrix::from_element(3, 1, 1.0);
    let g: Vec<String> = ["g0", "g1", "g2"].iter().map(|s| s.to_string()).collect();
    let pa = a.predict(&x, &z, &g).unwrap();
    let pb = b.predict(&x, &z, &g).unwrap();
    assert_eq!(pa.class, pb.class);
    for (u, v) in pa.probs.iter().flatten().zip(pb.probs.iter().flatten()) {
        assert!((u - v).abs() < 1e-10);
    }
}

#[test]
fn prediction_checks_dimensions() {
    let m = hand_model(vec![-1.0, 1.0], vec![0.0], 0.0);
    let x = DMatrix::from_element(2, 2, 0.0);
    let z = DMatrix::from_element(2, 1, 1.0);
    assert!(m.predict(&x, &z, &["g0".into(), "g0".into()]).is_err());
    let x1 = DMatrix::from_element(2, 1, 0.0);
    assert!(m.predict(&x1, &z, &["g0".into()]).is_err());
}

#[test]
fn initializer_outputs_probabilities() {
    let sim = generate(&DgpSpec::table(2, 8).unwrap()).unwrap();
    let d = sim.train().unwrap();
    let cfg = ForestConfig { num_trees: 100, ..ForestConfig::default() };
    let init = OrdinalInitializer::fit(d.x(), d.y(), 3, &cfg).unwrap();
    for how in [InitPrediction::Oob, InitPrediction::InSample] {
        for p in init.training_proba(d.x(), how).unwrap() {
            assert_eq!(p.len(), 3);
            assert!(p.iter().all(|v| *v > 0.0));
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }
    let test = sim.test().unwrap();
    let classes = init.predict_class(test.x()).unwrap();
    assert!(classes.iter().all(|c| (1..=3).contains(c)));
}

#[test]
fn identical_rows_get_identical_in_sample_latent() {
    let sim = generate(&DgpSpec::table(1, 9).unwrap()).unwrap();
    let d = sim.train().unwrap();
    let mut x = d.x().clone();
    let row: Vec<f64> = x.row(0).iter().copied().collect();
    for (k, v) in row.iter().enumerate() {
        x[(5, k)] = *v;
    }
    let cfg = ForestConfig { num_trees: 100, ..ForestConfig::default() };
    let init = init_latent(&x, d.y(), 3, &cfg, InitPrediction::InSample).unwrap();
    assert_eq!(init.eta0[0], init.eta0[5]);
}

#[test]
fn higher_latent_means_higher_labels() {
    let sim = generate(&DgpSpec::table(2, 10).unwrap()).unwrap();
    let d = sim.train().unwrap();
    let init = init_latent(d.x(), d.y(), 3, &ForestConfig { num_trees: 200, ..ForestConfig::default() }, InitPrediction::Oob)
        .unwrap();
    let mean_of = |c: u32| {
        let v: Vec<f64> = d.y().iter().zip(&init.eta0).filter(|(y, _)| **y == c).map(|(_, e)| *e).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean_of(1) < mean_of(2) && mean_of(2) < mean_of(3));
}

#[test]
fn no_group_effect_converges_quickly() {
    for seed in 0..5 {
        let mut spec = DgpSpec::table(1, 300 + seed).unwrap();
        spec.sigma2_1 = 0.0;
        let d = generate(&spec).unwrap().train().unwrap();
        let m = fit_omerf(&d, RandomEffectsSpec::intercept_only(), &OmerfConfig::default(), None).unwrap();
        assert!(m.converged);
        assert!(m.iterations <= 3, "seed {seed}: {:?}", m.trace);
        assert!(m.clmm.sigma2[0] < 0.1, "seed {seed}: {}", m.clmm.sigma2[0]);
        assert!(m.clmm.b_modes.iter().all(|b| b[0].abs() < 0.2));
        assert_eq!(m.trace.len(), m.iterations);
        for row in m.random_effects() {
            assert!(row.lower <= 0.0 && row.upper >= 0.0);
        }
    }
}

#[test]
fn warm_start_at_fixed_point_stops_immediately() {
    // one unbagged tree with all features: the update map is deterministic
    let d = generate(&DgpSpec::table(1, 21).unwrap()).unwrap().train().unwrap();
    let tight = OmerfConfig {
        toll: 1e-6,
        forest_config: ForestConfig {
            num_trees: 1,
            bootstrap: false,
            mtry: Some(d.n_features()),
            min_node_size: 20,
            ..ForestConfig::default()
        },
        init_prediction: InitPrediction::InSample,
        offset_source: OffsetSource::InSample,
        ..OmerfConfig::default()
    };
    let m = fit_omerf(&d, RandomEffectsSpec::intercept_only(), &tight, None).unwrap();
    assert!(m.converged, "{:?}", m.trace);
    let cfg = OmerfConfig { toll: 0.05, ..tight };
    let again = fit_omerf(&d, RandomEffectsSpec::intercept_only(), &cfg, Some(&m.clmm.modes_matrix())).unwrap();
    assert_eq!(again.iterations, 1, "{:?}", again.trace);
    assert!(again.trace[0] < cfg.toll);
}

#[test]
fn warm_start_shape_is_checked() {
    let d = generate(&DgpSpec::table(1, 22).unwrap()).unwrap().train().unwrap();
    let bad = DMatrix::zeros(3, 1);
    assert!(fit_omerf(&d, RandomEffectsSpec::intercept_only(), &small_config(), Some(&bad)).is_err());
    assert!(fit_omerf(&d, RandomEffectsSpec { q_slopes: 1 }, &small_config(), None).is_err());
}

#[test]
fn itmax_reached_is_reported() {
    let d = generate(&DgpSpec::table(3, 23).unwrap()).unwrap().train().unwrap();
    let cfg = OmerfConfig { itmax: 1, toll: 1e-12, ..small_config() };
    let m = fit_omerf(&d, RandomEffectsSpec::intercept_only(), &cfg, None).unwrap();
    assert!(!m.converged);
    assert_eq!(m.iterations, 1);
}

#[test]
fn dgp1_converges_before_itmax() {
    let mut converged = 0;
    for seed in 0..20 {
        let d = generate(&DgpSpec::table(1, 500 + seed).unwrap()).unwrap().train().unwrap();
        let m = fit_omerf(&d, RandomEffectsSpec::intercept_only(), &OmerfConfig::default(), None).unwrap();
        if m.converged {
            assert!(*m.trace.last().unwrap() < m.config.toll);
            converged += 1;
        }
    }
    assert!(converged >= 18, "{converged}/20");
}

#[test]
fn fit_is_reproducible_across_thread_counts() {
    let d = generate(&DgpSpec::table(5, 24).unwrap()).unwrap().train().unwrap();
    let spec = RandomEffectsSpec { q_slopes: 1 };
    let a = omerf::par::with_threads(Some(1), || fit_omerf(&d, spec, &small_config(), None).unwrap());
    let b = omerf::par::with_threads(Some(4), || fit_omerf(&d, spec, &small_config(), None).unwrap());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a, b);
    let design = d.design();
    assert_eq!(a.predict_design(&design).unwrap(), a.predict_design(&design).unwrap());
    assert_eq!(a.clmm.b_modes[0].len(), 2);
}

#[test]
fn random_effects_sorted_and_relabeling_permutes_rows() {
    let sim = generate(&DgpSpec::table(3, 25).unwrap()).unwrap();
    let d = sim.train().unwrap();
    let m = fit_omerf(&d, RandomEffectsSpec::intercept_only(), &small_config(), None).unwrap();
    let table = extract_random_effects(&m);
    let labels: Vec<&str> = table.iter().map(|r| r.group.as_str()).collect();
    let mut sorted = labels.clone();
    sorted.sort();
    assert_eq!(labels, sorted);
    for r in &table {
        assert_abs_diff_eq!(r.upper - r.estimate, 1.96 * r.sd, epsilon = 1e-12);
    }

    // rename g01..g10 to z10..z01: same estimates, reverse order
    let renamed: Vec<String> = d.group_labels().iter().map(|g| {
        let k: usize = g[1..].parse().unwrap();
        format!("z{:02}", 11 - k)
    }).collect();
    let d2 = omerf::data::GroupedOrdinalDataset::new(
        d.x().clone(),
        d.z().clone(),
        d.group().to_vec(),
        d.y().to_vec(),
        3,
        d.feature_names().to_vec(),
        d.random_names().to_vec(),
        renamed,
    )
    .unwrap();
    let m2 = fit_omerf(&d2, RandomEffectsSpec::intercept_only(), &small_config(), None).unwrap();
    let t2 = extract_random_effects(&m2);
    for (a, b) in table.iter().zip(t2.iter().rev()) {
        assert_abs_diff_eq!(a.estimate, b.estimate, epsilon = 1e-9);
    }
}

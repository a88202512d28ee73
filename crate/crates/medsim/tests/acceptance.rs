//! Acceptance suite: every criterion prints one PASS line when it holds.
//!
//! The two long-running criteria (flow-engine oracle equivalence and
//! bootstrap coverage) are marked `#[ignore]`; run them with
//! `cargo test -p medsim --test acceptance -- --include-ignored`.

use std::fs::File;

use medsim::data::CausalDataset;
use medsim::flows::{
    elu_plus, joint_nll, joint_nll_with_gradients, train_flows, FlowArchitecture, FlowModel,
    FlowVarSpec, QuadratureRule, TrainConfig,
};
use medsim::glm::{fit_mle, Family, TermSpec};
use medsim::numeric::{ks_statistic_std_normal, mean, sample_sd};
use medsim::oracle::{DiscreteDgp, LinearGaussianDgp};
use medsim::pipeline::{
    run_analysis, AnalysisSpec, EngineSpec, GlmModelSpec, ParametricSpec,
};
use medsim::rng::RngKey;
use medsim::sim::{
    bootstrap, bootstrap_replicate_seed, estimate_interventional, estimate_natural_pse,
    simulate_lambda, simulate_psi, CondModel, EffectReport, Estimand, LambdaAssignment, Mode,
    ModelBundle, PsiAssignment, ReportMode, SimDriver,
};

fn fixture(name: &str) -> DiscreteDgp {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    DiscreteDgp::from_json(File::open(path).unwrap()).unwrap()
}

fn linear_dgp() -> LinearGaussianDgp {
    LinearGaussianDgp {
        a: [0.1, 0.3, 0.5],
        b: [-0.2, 0.25, 0.3, 0.4],
        c: [0.05, 0.2, 0.2, 0.25, 0.6],
        sd_l: 1.0,
        sd_x: 1.0,
        sd_y: 1.0,
    }
}

fn glm_cond(family: Family, terms: TermSpec, response: &str, ds: &CausalDataset) -> CondModel {
    let fit = fit_mle(family, &terms, response, ds).unwrap();
    CondModel::from_glm(fit, ds.schema()).unwrap()
}

/// Saturated logistic mediator models plus a saturated two-level ordinal
/// outcome model: correctly specified on the all-binary process.
fn saturated_natural(ds: &CausalDataset) -> ModelBundle {
    ModelBundle::new(
        Mode::NaturalPse,
        ds.schema(),
        glm_cond(Family::BernoulliLogit, TermSpec::saturated(&["v", "d"]), "l", ds),
        glm_cond(Family::BernoulliLogit, TermSpec::saturated(&["v", "d", "l"]), "x", ds),
        glm_cond(
            Family::OrdinalLogit { levels: 2 },
            TermSpec::saturated(&["v", "d", "l", "x"]),
            "y",
            ds,
        ),
    )
    .unwrap()
}

fn saturated_interventional(ds: &CausalDataset) -> ModelBundle {
    ModelBundle::new(
        Mode::Interventional,
        ds.schema(),
        glm_cond(Family::BernoulliLogit, TermSpec::saturated(&["v", "d"]), "l", ds),
        glm_cond(Family::BernoulliLogit, TermSpec::saturated(&["v", "d"]), "x", ds),
        glm_cond(
            Family::OrdinalLogit { levels: 2 },
            TermSpec::saturated(&["v", "d", "l", "x"]),
            "y",
            ds,
        ),
    )
    .unwrap()
}

fn saturated_parametric_spec() -> ParametricSpec {
    ParametricSpec {
        l: GlmModelSpec {
            family: Family::BernoulliLogit,
            terms: TermSpec::saturated(&["v", "d"]),
        },
        x_given_l: Some(GlmModelSpec {
            family: Family::BernoulliLogit,
            terms: TermSpec::saturated(&["v", "d", "l"]),
        }),
        x_marginal: Some(GlmModelSpec {
            family: Family::BernoulliLogit,
            terms: TermSpec::saturated(&["v", "d"]),
        }),
        y: GlmModelSpec {
            family: Family::OrdinalLogit { levels: 2 },
            terms: TermSpec::saturated(&["v", "d", "l", "x"]),
        },
    }
}

fn assert_decompositions(report: &EffectReport) {
    if let (Some(ate), Some(mnde), Some(mnie)) = (
        report.point(Estimand::Ate),
        report.point(Estimand::Mnde),
        report.point(Estimand::Mnie),
    ) {
        assert!((ate - (mnde + mnie)).abs() <= 1e-12, "ATE vs MNDE+MNIE");
        let pse_sum = report.point(Estimand::PseDy).unwrap()
            + report.point(Estimand::PseDxy).unwrap()
            + report.point(Estimand::PseDly).unwrap();
        assert!((ate - pse_sum).abs() <= 1e-12, "ATE vs PSE sum");
    }
    if let (Some(oe), Some(ide), Some(iie)) = (
        report.point(Estimand::Oe),
        report.point(Estimand::Ide),
        report.point(Estimand::Iie),
    ) {
        assert!((oe - (ide + iie)).abs() <= 1e-12, "OE vs IDE+IIE");
    }
}

#[test]
fn acceptance_1_decomposition_identities() {
    let dgp = fixture("hand_binary_dgp.json");
    let ds = dgp.sample_dataset(2000, 101);
    let natural = estimate_natural_pse(
        &saturated_natural(&ds),
        &ds,
        SimDriver::Replicates { j: 50 },
        11,
    )
    .unwrap();
    let interventional = estimate_interventional(
        &saturated_interventional(&ds),
        &ds,
        SimDriver::Replicates { j: 50 },
        11,
    )
    .unwrap();
    let merged = natural.merge(interventional);
    assert_decompositions(&merged);

    // and on a full pipeline run with bootstrap intervals attached
    let spec = AnalysisSpec {
        engine: EngineSpec::Parametric(saturated_parametric_spec()),
        mode: ReportMode::Both,
        j: 20,
        bootstrap_reps: 16,
        seed: 3,
        sd_units: false,
    };
    let result = run_analysis(&ds, &spec).unwrap();
    assert_decompositions(&result.report);
    println!("ACCEPTANCE 1 (decomposition identities): PASS");
}

#[test]
fn acceptance_2_discrete_oracle_equivalence_parametric() {
    let dgp = fixture("hand_binary_dgp.json");
    let n = 50_000;
    let j = 1000;
    let ds = dgp.sample_dataset(n, 20240601);
    let key = RngKey::new(77);

    let natural = saturated_natural(&ds);
    for d1 in [0.0, 1.0] {
        for d2 in [0.0, 1.0] {
            for d3 in [0.0, 1.0] {
                let a = PsiAssignment { d1, d2, d3 };
                let sim = simulate_psi(&natural, &ds, a, j, key).unwrap();
                let exact = dgp.eval_psi_exact(a);
                assert!(
                    (sim - exact).abs() <= 0.01,
                    "psi({d1},{d2},{d3}): sim {sim} vs exact {exact}"
                );
            }
        }
    }

    let interventional = saturated_interventional(&ds);
    for d1 in [0.0, 1.0] {
        for d2 in [0.0, 1.0] {
            let a = LambdaAssignment { d1, d2 };
            let sim = simulate_lambda(&interventional, &ds, a, j, key).unwrap();
            let exact = dgp.eval_lambda_exact(a);
            assert!(
                (sim - exact).abs() <= 0.01,
                "lambda({d1},{d2}): sim {sim} vs exact {exact}"
            );
        }
    }

    let truth = dgp.exact_effects(1.0, 0.0);
    let nat = estimate_natural_pse(&natural, &ds, SimDriver::Replicates { j }, 77).unwrap();
    let int =
        estimate_interventional(&interventional, &ds, SimDriver::Replicates { j }, 77).unwrap();
    let checks = [
        (nat.point(Estimand::Ate).unwrap(), truth.ate, "ATE"),
        (nat.point(Estimand::Mnde).unwrap(), truth.mnde, "MNDE"),
        (nat.point(Estimand::Mnie).unwrap(), truth.mnie, "MNIE"),
        (nat.point(Estimand::PseDy).unwrap(), truth.pse_dy, "PSE_DY"),
        (nat.point(Estimand::PseDly).unwrap(), truth.pse_dly, "PSE_DLY"),
        (nat.point(Estimand::PseDxy).unwrap(), truth.pse_dxy, "PSE_DXY"),
        (int.point(Estimand::Oe).unwrap(), truth.oe, "OE"),
        (int.point(Estimand::Ide).unwrap(), truth.ide, "IDE"),
        (int.point(Estimand::Iie).unwrap(), truth.iie, "IIE"),
    ];
    for (sim, exact, name) in checks {
        assert!((sim - exact).abs() <= 0.02, "{name}: sim {sim} vs exact {exact}");
    }
    println!("ACCEPTANCE 2 (discrete oracle equivalence, parametric): PASS");
}

#[test]
fn acceptance_3_linear_gaussian_closed_form() {
    let dgp = linear_dgp();
    let ds = dgp.sample_dataset(50_000, 314);
    let truth = dgp.exact_effects(1.0, 0.0);

    let bundle = ModelBundle::new(
        Mode::NaturalPse,
        ds.schema(),
        glm_cond(Family::Gaussian, TermSpec::main_effects(&["v", "d"]), "l", &ds),
        glm_cond(Family::Gaussian, TermSpec::main_effects(&["v", "d", "l"]), "x", &ds),
        glm_cond(Family::Gaussian, TermSpec::main_effects(&["v", "d", "l", "x"]), "y", &ds),
    )
    .unwrap();
    let report =
        estimate_natural_pse(&bundle, &ds, SimDriver::Replicates { j: 1000 }, 2718).unwrap();
    let checks = [
        (report.point(Estimand::PseDy).unwrap(), truth.pse_dy, "PSE_DY"),
        (report.point(Estimand::PseDxy).unwrap(), truth.pse_dxy, "PSE_DXY"),
        (report.point(Estimand::PseDly).unwrap(), truth.pse_dly, "PSE_DLY"),
        (report.point(Estimand::Ate).unwrap(), truth.ate, "ATE"),
    ];
    for (sim, exact, name) in checks {
        assert!(
            (sim - exact).abs() <= 0.02,
            "{name}: sim {sim} vs closed form {exact}"
        );
    }
    println!("ACCEPTANCE 3 (linear-gaussian closed form): PASS");
}

#[test]
fn acceptance_4_null_invariance() {
    let dgp = fixture("hand_binary_dgp.json");
    let ds = dgp.sample_dataset(3000, 55);
    let glm = |terms: TermSpec, response: &str| {
        glm_cond(Family::BernoulliLogit, terms, response, &ds)
    };
    // treatment excluded from every linear predictor
    let natural = ModelBundle::new(
        Mode::NaturalPse,
        ds.schema(),
        glm(TermSpec::default().term(&["v"]), "l"),
        glm(TermSpec::default().term(&["v"]).term(&["l"]), "x"),
        glm(TermSpec::default().term(&["v"]).term(&["l"]).term(&["x"]), "y"),
    )
    .unwrap();
    let report =
        estimate_natural_pse(&natural, &ds, SimDriver::Replicates { j: 100 }, 9).unwrap();
    for e in &report.effects {
        assert!(e.point == 0.0, "{:?} = {} (expected exact zero)", e.estimand, e.point);
    }

    let interventional = ModelBundle::new(
        Mode::Interventional,
        ds.schema(),
        glm(TermSpec::default().term(&["v"]), "l"),
        glm(TermSpec::default().term(&["v"]), "x"),
        glm(TermSpec::default().term(&["v"]).term(&["l"]).term(&["x"]), "y"),
    )
    .unwrap();
    let report =
        estimate_interventional(&interventional, &ds, SimDriver::Replicates { j: 100 }, 9)
            .unwrap();
    for e in &report.effects {
        assert!(e.point == 0.0, "{:?} = {} (expected exact zero)", e.estimand, e.point);
    }
    println!("ACCEPTANCE 4 (null invariance): PASS");
}

#[test]
fn acceptance_5_flow_numerics() {
    // quadrature polynomial exactness: degree < N over [0, 1], plus the
    // low-degree case on a longer interval and an analytic non-polynomial
    for n in [8, 16, 32] {
        let rule = QuadratureRule::clenshaw_curtis(n);
        for deg in 0..n {
            let exact = 1.0 / (deg as f64 + 1.0);
            let got = rule.integrate(1.0, |t| t.powi(deg as i32));
            assert!((got - exact).abs() <= 1e-9, "n={n} deg={deg}: {got} vs {exact}");
        }
    }
    let rule = QuadratureRule::clenshaw_curtis(8);
    assert!((rule.integrate(2.0, |t| 3.0 * t * t) - 8.0).abs() <= 1e-9);
    let rule = QuadratureRule::clenshaw_curtis(32);
    assert!((rule.integrate(1.0, f64::exp) - (std::f64::consts::E - 1.0)).abs() <= 1e-8);
    // elu_plus positivity
    for i in -800..=800 {
        assert!(elu_plus(i as f64 / 20.0) > 0.0);
    }

    let schema = linear_dgp().schema();
    let arch = FlowArchitecture {
        embedding_hidden: vec![16, 12, 10, 10],
        embedding_out: 8,
        integrand_hidden: vec![16, 12, 10, 10],
        quadrature_nodes: 32,
    };
    let mut flow =
        FlowModel::new(&schema, "l", &["v".to_string(), "d".to_string()], &arch).unwrap();
    flow.init_weights(&mut RngKey::new(12).stream());
    let c = flow.embed(&[0.4, 1.0]);

    // strict monotonicity on a grid
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=120 {
        let l = -6.0 + i as f64 * 0.1;
        let h = flow.forward_std(&c, l);
        assert!(h > prev);
        prev = h;
    }
    // inversion round trip
    for i in 0..100 {
        let l = -3.0 + i as f64 * 0.06;
        let z = flow.forward_std(&c, l);
        let back = flow.invert_std(&c, z).unwrap();
        assert!((back - l).abs() <= 1e-4, "round trip at l = {l}");
    }
    // density normalization by trapezoid over +-10 standardized units
    let grid = 4000;
    let mut total = 0.0;
    for i in 0..=grid {
        let l = -10.0 + 20.0 * i as f64 / grid as f64;
        let w = if i == 0 || i == grid { 0.5 } else { 1.0 };
        total += w * flow.log_density_std(&c, l).exp();
    }
    total *= 20.0 / grid as f64;
    assert!((total - 1.0).abs() <= 0.01, "normalization: {total}");

    // gradient of the joint NLL against central finite differences
    let ds = linear_dgp().sample_dataset(64, 9);
    let rows: Vec<Vec<f64>> = (0..64).map(|i| ds.row(i).to_vec()).collect();
    let mut models = vec![flow];
    let (_, grads) = joint_nll_with_gradients(&models, &rows).unwrap();
    let h = 1e-4;
    let mut stream = RngKey::new(31).stream();
    for _ in 0..20 {
        let group = stream.below(3);
        let layer_pick = stream.next_u64() as usize;
        let idx_pick = stream.next_u64() as usize;
        let (get, set, analytic): (f64, Box<dyn Fn(&mut FlowModel, f64)>, f64) = match group {
            0 => {
                let l = layer_pick % models[0].embedding.layers.len();
                let k = idx_pick % models[0].embedding.layers[l].weights.len();
                (
                    models[0].embedding.layers[l].weights[k],
                    Box::new(move |m, v| m.embedding.layers[l].weights[k] = v),
                    grads[0].embedding.weights[l][k],
                )
            }
            1 => {
                let l = layer_pick % models[0].integrand.layers.len();
                let k = idx_pick % models[0].integrand.layers[l].weights.len();
                (
                    models[0].integrand.layers[l].weights[k],
                    Box::new(move |m, v| m.integrand.layers[l].weights[k] = v),
                    grads[0].integrand.weights[l][k],
                )
            }
            _ => {
                let k = idx_pick % models[0].offset_weights.len();
                (
                    models[0].offset_weights[k],
                    Box::new(move |m, v| m.offset_weights[k] = v),
                    grads[0].offset_weights[k],
                )
            }
        };
        set(&mut models[0], get + h);
        let up = joint_nll(&models, &rows).unwrap();
        set(&mut models[0], get - h);
        let down = joint_nll(&models, &rows).unwrap();
        set(&mut models[0], get);
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic - fd).abs() / fd.abs().max(1e-8);
        assert!(rel <= 1e-3, "gradient check: analytic {analytic} vs fd {fd}");
    }
    println!("ACCEPTANCE 5 (flow numerics): PASS");
}

#[test]
fn acceptance_6_flow_density_recovery() {
    let dgp = linear_dgp();
    let train_ds = dgp.sample_dataset(20_000, 606);
    let test_ds = dgp.sample_dataset(4_000, 607);

    let spec = FlowVarSpec {
        target: "l".into(),
        parents: vec!["v".into(), "d".into()],
        architecture: FlowArchitecture::default(),
    };
    let cfg = TrainConfig {
        max_epochs: 25,
        restarts: 2,
        learning_rate: 5e-3,
        seed: 42,
        ..TrainConfig::default()
    };
    let (models, report) = train_flows(&[spec], &train_ds, &cfg).unwrap();
    let flow = &models[0];
    assert!(report.warnings.is_empty(), "no small-sample warning expected");

    // held-out mean NLL vs the gaussian differential entropy with the true
    // noise SD (raw units)
    let rows: Vec<Vec<f64>> = (0..test_ds.n_rows()).map(|i| test_ds.row(i).to_vec()).collect();
    let nll = joint_nll(&models, &rows).unwrap();
    let optimum = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * dgp.sd_l.powi(2)).ln();
    assert!(
        (nll - optimum).abs() <= 0.05,
        "held-out NLL {nll} vs analytic optimum {optimum}"
    );

    // transformed held-out data is close to standard normal
    let z: Vec<f64> = rows
        .iter()
        .map(|row| {
            let parents_std = flow.standardize_parents(row);
            let c = flow.embed(&parents_std);
            flow.forward_std(&c, flow.target_standardizer.standardize(row[flow.target_index]))
        })
        .collect();
    let m = mean(&z);
    let sd = sample_sd(&z).unwrap();
    let ks = ks_statistic_std_normal(&z);
    assert!(m.abs() <= 0.05, "z mean {m}");
    assert!((sd - 1.0).abs() <= 0.05, "z sd {sd}");
    assert!(ks <= 0.02, "KS statistic {ks}");

    // generative check: inverse sampling at a fixed record reproduces the
    // generating conditional (mu(v, d), sigma)
    let (v, d) = (0.4, 1.0);
    let mu = dgp.a[0] + dgp.a[1] * v + dgp.a[2] * d;
    let record = [v, d, 0.0, 0.0, 0.0];
    let key = RngKey::new(4242);
    let draws = 10_000u64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 0..draws {
        let mut stream = key.stream_at(i, 0, 0);
        let value = flow.sample_from_record(&record, &mut stream).unwrap();
        s1 += value;
        s2 += value * value;
    }
    let sample_mean = s1 / draws as f64;
    let sample_sd_value = (s2 / draws as f64 - sample_mean * sample_mean).sqrt();
    assert!((sample_mean - mu).abs() <= 0.05, "sample mean {sample_mean} vs mu {mu}");
    assert!(
        (sample_sd_value - dgp.sd_l).abs() <= 0.05,
        "sample sd {sample_sd_value} vs sigma {}",
        dgp.sd_l
    );
    println!("ACCEPTANCE 6 (flow density recovery): PASS (nll {nll:.4} vs {optimum:.4}, ks {ks:.4})");
}

#[test]
#[ignore = "slow: trains four flows and simulates b = 1e5 draws per mean"]
fn acceptance_7_flow_engine_oracle_equivalence() {
    let dgp = fixture("hand_binary_dgp.json");
    let ds = dgp.sample_dataset(20_000, 700);
    let truth = dgp.exact_effects(1.0, 0.0);

    let arch = FlowArchitecture::default();
    let make = |target: &str, parents: &[&str]| FlowVarSpec {
        target: target.into(),
        parents: parents.iter().map(|s| s.to_string()).collect(),
        architecture: arch.clone(),
    };
    let specs = vec![
        make("l", &["v", "d"]),
        make("x", &["v", "d", "l"]),
        make("y", &["v", "d", "l", "x"]),
    ];
    let cfg = TrainConfig {
        max_epochs: 50,
        restarts: 2,
        learning_rate: 5e-3,
        seed: 701,
        ..TrainConfig::default()
    };
    let (nat_models, _) = train_flows(&specs, &ds, &cfg).unwrap();
    let schema = ds.schema();
    let natural = ModelBundle::new(
        Mode::NaturalPse,
        schema,
        CondModel::from_flow(nat_models[0].clone(), schema),
        CondModel::from_flow(nat_models[1].clone(), schema),
        CondModel::from_flow(nat_models[2].clone(), schema),
    )
    .unwrap();

    let int_specs = vec![make("x", &["v", "d"])];
    let (int_models, _) = train_flows(&int_specs, &ds, &cfg).unwrap();
    let interventional = ModelBundle::new(
        Mode::Interventional,
        schema,
        CondModel::from_flow(nat_models[0].clone(), schema),
        CondModel::from_flow(int_models[0].clone(), schema),
        CondModel::from_flow(nat_models[2].clone(), schema),
    )
    .unwrap();

    let b = 100_000;
    let nat = estimate_natural_pse(&natural, &ds, SimDriver::Subsample { b }, 702).unwrap();
    let int =
        estimate_interventional(&interventional, &ds, SimDriver::Subsample { b }, 702).unwrap();
    let checks = [
        (nat.point(Estimand::Ate).unwrap(), truth.ate, "ATE"),
        (nat.point(Estimand::Mnde).unwrap(), truth.mnde, "MNDE"),
        (nat.point(Estimand::Mnie).unwrap(), truth.mnie, "MNIE"),
        (nat.point(Estimand::PseDy).unwrap(), truth.pse_dy, "PSE_DY"),
        (nat.point(Estimand::PseDly).unwrap(), truth.pse_dly, "PSE_DLY"),
        (nat.point(Estimand::PseDxy).unwrap(), truth.pse_dxy, "PSE_DXY"),
        (int.point(Estimand::Oe).unwrap(), truth.oe, "OE"),
        (int.point(Estimand::Ide).unwrap(), truth.ide, "IDE"),
        (int.point(Estimand::Iie).unwrap(), truth.iie, "IIE"),
    ];
    for (sim, exact, name) in checks {
        assert!(
            (sim - exact).abs() <= 0.03,
            "{name}: flow-engine {sim} vs exact {exact}"
        );
    }
    println!("ACCEPTANCE 7 (flow-engine oracle equivalence): PASS");
}

#[test]
#[ignore = "slow: 200 synthetic datasets x 200 bootstrap replicates"]
fn acceptance_8_bootstrap_coverage() {
    let dgp = fixture("hand_binary_dgp.json");
    let truth = dgp.exact_effects(1.0, 0.0);
    let truth_vec = [
        truth.oe, truth.ide, truth.iie, truth.ate, truth.mnde, truth.mnie, truth.pse_dy,
        truth.pse_dly, truth.pse_dxy,
    ];
    let (n, j, b_reps, replications) = (2000, 200, 200, 200);
    let pspec = saturated_parametric_spec();

    let mut covered = [0usize; 9];
    for rep in 0..replications {
        let ds = dgp.sample_dataset(n, 9000 + rep as u64);
        let seed = 100_000 + rep as u64;
        let spec = AnalysisSpec {
            engine: EngineSpec::Parametric(pspec.clone()),
            mode: ReportMode::Both,
            j,
            bootstrap_reps: b_reps,
            seed,
            sd_units: false,
        };
        let result = run_analysis(&ds, &spec).unwrap();
        for (slot, (effect, truth)) in covered
            .iter_mut()
            .zip(result.report.effects.iter().zip(&truth_vec))
        {
            let (lo, hi) = (effect.lower.unwrap(), effect.upper.unwrap());
            if lo <= *truth && *truth <= hi {
                *slot += 1;
            }
        }
    }
    for (k, count) in covered.iter().enumerate() {
        let coverage = *count as f64 / replications as f64;
        println!("  estimand {k}: coverage {coverage:.3}");
        assert!(
            (0.90..=0.98).contains(&coverage),
            "estimand {k}: coverage {coverage} outside [0.90, 0.98]"
        );
    }
    println!("ACCEPTANCE 8 (bootstrap coverage): PASS");
}

/// Extra guard: the bundled fixture and the sampled data agree with the
/// zero-indirect construction (X depends only on V, so IIE is exactly 0).
#[test]
fn zero_iie_fixture_oracle_and_estimate() {
    let dgp = fixture("zero_iie_dgp.json");
    let truth = dgp.exact_effects(1.0, 0.0);
    assert_eq!(truth.iie, 0.0);
    let ds = dgp.sample_dataset(20_000, 404);
    let bundle = saturated_interventional(&ds);
    let report =
        estimate_interventional(&bundle, &ds, SimDriver::Replicates { j: 300 }, 5).unwrap();
    assert!(report.point(Estimand::Iie).unwrap().abs() <= 0.02);
}

/// Bootstrap intervals behave on the hand process: intervals from the full
/// pipeline cover the oracle truth for a couple of seeds (smoke-level check
/// of the slow coverage criterion).
#[test]
fn bootstrap_pipeline_smoke() {
    let dgp = fixture("hand_binary_dgp.json");
    let ds = dgp.sample_dataset(1500, 5150);
    let truth = dgp.exact_effects(1.0, 0.0);
    let pspec = saturated_parametric_spec();
    let refit = |resample: &CausalDataset, r: u64| -> Result<Vec<f64>, medsim::Error> {
        let schema = resample.schema();
        let natural = ModelBundle::new(
            Mode::NaturalPse,
            schema,
            CondModel::from_glm(
                fit_mle(pspec.l.family, &pspec.l.terms, "l", resample)?,
                schema,
            )?,
            CondModel::from_glm(
                fit_mle(
                    pspec.x_given_l.as_ref().unwrap().family,
                    &pspec.x_given_l.as_ref().unwrap().terms,
                    "x",
                    resample,
                )?,
                schema,
            )?,
            CondModel::from_glm(
                fit_mle(pspec.y.family, &pspec.y.terms, "y", resample)?,
                schema,
            )?,
        )?;
        let report = estimate_natural_pse(
            &natural,
            resample,
            SimDriver::Replicates { j: 100 },
            bootstrap_replicate_seed(31, r),
        )?;
        Ok(report.effects.iter().map(|e| e.point).collect())
    };
    let cis = bootstrap(&ds, refit, 80, 31).unwrap();
    assert_eq!(cis.completed + cis.failed, 80);
    // ATE is the first estimand of the natural report
    assert!(cis.lower[0] <= truth.ate && truth.ate <= cis.upper[0]);
}

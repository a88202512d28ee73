//! Probe: joint training of the three flows on the binary process, with
//! per-flow implied-probability errors against the true tables and against
//! the empirical cell frequencies (the best any model of this data can do),
//! plus the resulting effect estimates vs the exact oracle and vs the
//! saturated parametric estimator on the same data.
//!
//! Usage: cargo run -p medsim --example flow_joint_probe -- [lr] [max_epochs] [restarts] [batch]

use medsim::flows::{train_flows, FlowArchitecture, FlowVarSpec, TrainConfig};
use medsim::glm::{fit_mle, Family, TermSpec};
use medsim::numeric::normal_cdf;
use medsim::oracle::demo_binary_dgp;
use medsim::sim::{
    estimate_interventional, estimate_natural_pse, CondModel, Estimand, Mode, ModelBundle,
    SimDriver,
};
use medsim::CausalDataset;

fn implied_p1(flow: &medsim::flows::FlowModel, record: &[f64]) -> f64 {
    let parents_std = flow.standardize_parents(record);
    let c = flow.embed(&parents_std);
    1.0 - normal_cdf(flow.discrete_bin_thresholds(&c).unwrap()[0])
}

fn empirical_p1(ds: &CausalDataset, target: usize, cond: &[(usize, f64)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..ds.n_rows() {
        let row = ds.row(i);
        if cond.iter().all(|&(j, v)| row[j] == v) {
            den += 1.0;
            num += row[target];
        }
    }
    num / den
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map_or(5e-3, |s| s.parse().unwrap());
    let max_epochs: usize = args.get(2).map_or(45, |s| s.parse().unwrap());
    let restarts: usize = args.get(3).map_or(1, |s| s.parse().unwrap());
    let batch: usize = args.get(4).map_or(512, |s| s.parse().unwrap());

    let dgp = demo_binary_dgp();
    let ds = dgp.sample_dataset(20_000, 700);
    let truth = dgp.exact_effects(1.0, 0.0);

    let arch = FlowArchitecture::default();
    let make = |target: &str, parents: &[&str]| FlowVarSpec {
        target: target.into(),
        parents: parents.iter().map(|s| s.to_string()).collect(),
        architecture: arch.clone(),
    };
    let cfg = TrainConfig {
        max_epochs,
        restarts,
        learning_rate: lr,
        batch_size: batch,
        seed: 701,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let specs = vec![
        make("l", &["v", "d"]),
        make("x", &["v", "d", "l"]),
        make("y", &["v", "d", "l", "x"]),
    ];
    let (nat, report) = train_flows(&specs, &ds, &cfg).unwrap();
    let (int, _) = train_flows(&[make("x", &["v", "d"])], &ds, &cfg).unwrap();
    println!("trained in {:.0}s", start.elapsed().as_secs_f64());
    for r in &report.restarts {
        println!(
            "restart {}: best epoch {}/{} val {:.5}",
            r.restart,
            r.best_epoch,
            r.epochs.len(),
            r.best_val_nll
        );
    }

    let p = |dgp_p: &[(Vec<(usize, f64)>, f64)], flow: &medsim::flows::FlowModel, name: &str| {
        let (mut worst_true, mut worst_emp): (f64, f64) = (0.0, 0.0);
        for (cond, true_p) in dgp_p {
            let mut record = [0.0; 5];
            for &(j, v) in cond {
                record[j] = v;
            }
            let implied = implied_p1(flow, &record);
            let emp = empirical_p1(&ds, flow.target_index, cond);
            worst_true = worst_true.max((implied - true_p).abs());
            worst_emp = worst_emp.max((implied - emp).abs());
        }
        println!("{name}: worst |implied-true| {worst_true:.4}, worst |implied-empirical| {worst_emp:.4}");
    };

    let mut l_cells = Vec::new();
    for (v, d, pt) in [(0., 0., 0.30), (0., 1., 0.55), (1., 0., 0.40), (1., 1., 0.70)] {
        l_cells.push((vec![(0usize, v), (1usize, d)], pt));
    }
    p(&l_cells, &nat[0], "L|V,D    ");

    let px = &dgp.p_x_given_vdl;
    let mut x_cells = Vec::new();
    for v in 0..2 {
        for d in 0..2 {
            for l in 0..2 {
                x_cells.push((
                    vec![(0, v as f64), (1, d as f64), (2, l as f64)],
                    px[v][d][l][1],
                ));
            }
        }
    }
    p(&x_cells, &nat[1], "X|V,D,L  ");

    let py = &dgp.p_y_given_vdlx;
    let mut y_cells = Vec::new();
    for v in 0..2 {
        for d in 0..2 {
            for l in 0..2 {
                for x in 0..2 {
                    y_cells.push((
                        vec![(0, v as f64), (1, d as f64), (2, l as f64), (3, x as f64)],
                        py[v][d][l][x][1],
                    ));
                }
            }
        }
    }
    p(&y_cells, &nat[2], "Y|V,D,L,X");

    let schema = ds.schema();
    let natural = ModelBundle::new(
        Mode::NaturalPse,
        schema,
        CondModel::from_flow(nat[0].clone(), schema),
        CondModel::from_flow(nat[1].clone(), schema),
        CondModel::from_flow(nat[2].clone(), schema),
    )
    .unwrap();
    let interventional = ModelBundle::new(
        Mode::Interventional,
        schema,
        CondModel::from_flow(nat[0].clone(), schema),
        CondModel::from_flow(int[0].clone(), schema),
        CondModel::from_flow(nat[2].clone(), schema),
    )
    .unwrap();
    let b = 100_000;
    let nat_rep = estimate_natural_pse(&natural, &ds, SimDriver::Subsample { b }, 702).unwrap();
    let int_rep =
        estimate_interventional(&interventional, &ds, SimDriver::Subsample { b }, 702).unwrap();

    // parametric reference on the same data
    let g = |fam, terms, resp: &str| {
        CondModel::from_glm(fit_mle(fam, &terms, resp, &ds).unwrap(), schema).unwrap()
    };
    let para_nat = ModelBundle::new(
        Mode::NaturalPse,
        schema,
        g(Family::BernoulliLogit, TermSpec::saturated(&["v", "d"]), "l"),
        g(Family::BernoulliLogit, TermSpec::saturated(&["v", "d", "l"]), "x"),
        g(Family::BernoulliLogit, TermSpec::saturated(&["v", "d", "l", "x"]), "y"),
    )
    .unwrap();
    let para_int = ModelBundle::new(
        Mode::Interventional,
        schema,
        g(Family::BernoulliLogit, TermSpec::saturated(&["v", "d"]), "l"),
        g(Family::BernoulliLogit, TermSpec::saturated(&["v", "d"]), "x"),
        g(Family::BernoulliLogit, TermSpec::saturated(&["v", "d", "l", "x"]), "y"),
    )
    .unwrap();
    let pn = estimate_natural_pse(&para_nat, &ds, SimDriver::Replicates { j: 500 }, 3).unwrap();
    let pi =
        estimate_interventional(&para_int, &ds, SimDriver::Replicates { j: 500 }, 3).unwrap();

    println!("estimand  exact      flow       parametric");
    let rows = [
        (Estimand::Ate, truth.ate),
        (Estimand::Mnde, truth.mnde),
        (Estimand::Mnie, truth.mnie),
        (Estimand::PseDy, truth.pse_dy),
        (Estimand::PseDly, truth.pse_dly),
        (Estimand::PseDxy, truth.pse_dxy),
    ];
    for (e, t) in rows {
        println!(
            "{:9} {:+.4}   {:+.4}    {:+.4}",
            e.label(),
            t,
            nat_rep.point(e).unwrap(),
            pn.point(e).unwrap()
        );
    }
    let rows = [
        (Estimand::Oe, truth.oe),
        (Estimand::Ide, truth.ide),
        (Estimand::Iie, truth.iie),
    ];
    for (e, t) in rows {
        println!(
            "{:9} {:+.4}   {:+.4}    {:+.4}",
            e.label(),
            t,
            int_rep.point(e).unwrap(),
            pi.point(e).unwrap()
        );
    }
}

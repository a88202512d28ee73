//! Scratch harness for flow-training diagnostics: prints per-epoch losses
//! and held-out transformation statistics for a linear-gaussian target.
//!
//! Usage: cargo run -p medsim --example flow_tuning -- [lr] [max_epochs] [restarts] [n]

use medsim::flows::{joint_nll, train_flows, FlowArchitecture, FlowVarSpec, TrainConfig};
use medsim::numeric::{ks_statistic_std_normal, mean, sample_sd};
use medsim::oracle::LinearGaussianDgp;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map_or(5e-3, |s| s.parse().unwrap());
    let max_epochs: usize = args.get(2).map_or(30, |s| s.parse().unwrap());
    let restarts: usize = args.get(3).map_or(1, |s| s.parse().unwrap());
    let n: usize = args.get(4).map_or(20_000, |s| s.parse().unwrap());

    let dgp = LinearGaussianDgp {
        a: [0.1, 0.3, 0.5],
        b: [-0.2, 0.25, 0.3, 0.4],
        c: [0.05, 0.2, 0.2, 0.25, 0.6],
        sd_l: 1.0,
        sd_x: 1.0,
        sd_y: 1.0,
    };
    let train_ds = dgp.sample_dataset(n, 606);
    let test_ds = dgp.sample_dataset(4000, 607);

    let spec = FlowVarSpec {
        target: "l".into(),
        parents: vec!["v".into(), "d".into()],
        architecture: FlowArchitecture::default(),
    };
    let cfg = TrainConfig {
        max_epochs,
        restarts,
        learning_rate: lr,
        seed: 42,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let (models, report) = train_flows(&[spec], &train_ds, &cfg).unwrap();
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    for r in &report.restarts {
        println!(
            "restart {} (halvings {}): best epoch {} val {:.5}",
            r.restart, r.lr_halvings, r.best_epoch, r.best_val_nll
        );
        for e in &r.epochs {
            println!("  epoch {:3}  train {:.5}  val {:.5}", e.epoch, e.train_nll, e.val_nll);
        }
    }
    println!("chosen restart: {}", report.chosen_restart);

    let flow = &models[0];
    let rows: Vec<Vec<f64>> = (0..test_ds.n_rows()).map(|i| test_ds.row(i).to_vec()).collect();
    let nll = joint_nll(&models, &rows).unwrap();
    let optimum = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let z: Vec<f64> = rows
        .iter()
        .map(|row| {
            let parents_std = flow.standardize_parents(row);
            let c = flow.embed(&parents_std);
            flow.forward_std(&c, flow.target_standardizer.standardize(row[flow.target_index]))
        })
        .collect();
    println!(
        "held-out nll {:.5} (optimum {:.5}, gap {:+.5})",
        nll,
        optimum,
        nll - optimum
    );
    println!(
        "z: mean {:+.4} sd {:.4} ks {:.4}",
        mean(&z),
        sample_sd(&z).unwrap(),
        ks_statistic_std_normal(&z)
    );
}

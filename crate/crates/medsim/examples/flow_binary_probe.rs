//! Probe: how well a flow trained on a dequantized binary mediator recovers
//! the conditional probability table of the generating process.
//!
//! Usage: cargo run -p medsim --example flow_binary_probe -- [lr] [max_epochs] [restarts]

use medsim::flows::{train_flows, FlowArchitecture, FlowVarSpec, TrainConfig};
use medsim::numeric::normal_cdf;
use medsim::oracle::demo_binary_dgp;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map_or(5e-3, |s| s.parse().unwrap());
    let max_epochs: usize = args.get(2).map_or(20, |s| s.parse().unwrap());
    let restarts: usize = args.get(3).map_or(1, |s| s.parse().unwrap());

    let dgp = demo_binary_dgp();
    let ds = dgp.sample_dataset(20_000, 700);

    let target: String = args.get(4).cloned().unwrap_or_else(|| "l".to_string());
    let parents: Vec<String> = match target.as_str() {
        "l" => vec!["v".into(), "d".into()],
        "x" => vec!["v".into(), "d".into(), "l".into()],
        "y" => vec!["v".into(), "d".into(), "l".into(), "x".into()],
        other => panic!("unknown target {other}"),
    };
    let spec = FlowVarSpec {
        target: target.clone(),
        parents: parents.clone(),
        architecture: FlowArchitecture::default(),
    };
    let cfg = TrainConfig {
        max_epochs,
        restarts,
        learning_rate: lr,
        seed: 701,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let (models, report) = train_flows(&[spec], &ds, &cfg).unwrap();
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    for r in &report.restarts {
        println!(
            "restart {}: best epoch {} val {:.5} ({} epochs)",
            r.restart,
            r.best_epoch,
            r.best_val_nll,
            r.epochs.len()
        );
    }
    let flow = &models[0];
    println!("implied P({target}=1 | parents) vs table:");
    let mut worst: f64 = 0.0;
    let n_parents = parents.len();
    for pattern in 0..(1u32 << n_parents) {
        let mut record = [0.0; 5];
        for bit in 0..n_parents {
            record[bit] = ((pattern >> bit) & 1) as f64;
        }
        let (v, d, l, x) = (record[0] as usize, record[1] as usize, record[2] as usize, record[3] as usize);
        let p = match target.as_str() {
            "l" => dgp.p_l_given_vd[v][d][1],
            "x" => dgp.p_x_given_vdl[v][d][l][1],
            _ => dgp.p_y_given_vdlx[v][d][l][x][1],
        };
        let parents_std = flow.standardize_parents(&record);
        let c = flow.embed(&parents_std);
        let zeta = flow.discrete_bin_thresholds(&c).unwrap()[0];
        let implied = 1.0 - normal_cdf(zeta);
        worst = worst.max((implied - p).abs());
        println!("  pattern {pattern:2}: implied {implied:.4} true {p:.4} (err {:+.4})", implied - p);
    }
    println!("worst absolute error: {worst:.4}");
}

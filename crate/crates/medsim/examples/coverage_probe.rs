//! Probe: one replication of the bootstrap coverage study, timed, to size
//! the full 200-replication run.
//!
//! Usage: cargo run -p medsim --example coverage_probe -- [reps]

use medsim::glm::{Family, TermSpec};
use medsim::oracle::demo_binary_dgp;
use medsim::pipeline::{run_analysis, AnalysisSpec, EngineSpec, GlmModelSpec, ParametricSpec};
use medsim::sim::ReportMode;

fn main() {
    let reps: usize = std::env::args().nth(1).map_or(2, |s| s.parse().unwrap());
    let dgp = demo_binary_dgp();
    let truth = dgp.exact_effects(1.0, 0.0);
    let truth_vec = [
        truth.oe, truth.ide, truth.iie, truth.ate, truth.mnde, truth.mnie, truth.pse_dy,
        truth.pse_dly, truth.pse_dxy,
    ];
    let pspec = ParametricSpec {
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
    };

    for rep in 0..reps {
        let start = std::time::Instant::now();
        let ds = dgp.sample_dataset(2000, 9000 + rep as u64);
        let spec = AnalysisSpec {
            engine: EngineSpec::Parametric(pspec.clone()),
            mode: ReportMode::Both,
            j: 200,
            bootstrap_reps: 200,
            seed: 100_000 + rep as u64,
            sd_units: false,
        };
        let result = run_analysis(&ds, &spec).unwrap();
        let mut line = format!("rep {rep} ({:.1}s):", start.elapsed().as_secs_f64());
        for (effect, truth) in result.report.effects.iter().zip(&truth_vec) {
            let covered =
                effect.lower.unwrap() <= *truth && *truth <= effect.upper.unwrap();
            line.push_str(if covered { " y" } else { " N" });
        }
        println!("{line}");
    }
}

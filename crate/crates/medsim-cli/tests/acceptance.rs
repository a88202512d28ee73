//! CLI acceptance: byte-identical reruns at any thread count, library/CLI
//! agreement, exit codes, and validation output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medsim::oracle::demo_binary_dgp;

fn medsim_bin() -> &'static str {
    env!("CARGO_BIN_EXE_medsim")
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(medsim_bin())
        .args(args)
        .output()
        .expect("binary runs")
}

/// Writes a small binary dataset and a parametric run config; returns the
/// config path.
fn write_config(dir: &Path, seed: u64, bootstrap: u64, mode: &str) -> PathBuf {
    let data = dir.join("data.csv");
    demo_binary_dgp()
        .sample_dataset(500, 2024)
        .write_csv(&data)
        .unwrap();
    let config = serde_json::json!({
        "spec_version": 1,
        "data": data,
        "schema": {
            "confounders": [{"name": "v", "kind": "binary"}],
            "treatment": {"name": "d", "kind": "binary", "d": 1.0, "d_star": 0.0},
            "mediators": [{"name": "l", "kind": "binary"}, {"name": "x", "kind": "binary"}],
            "outcome": {"name": "y", "kind": "binary"}
        },
        "engine": "parametric",
        "models": {
            "l": {"family": "bernoulli_logit",
                  "terms": [[{"var": "v"}], [{"var": "d"}], [{"var": "v"}, {"var": "d"}]]},
            "x_given_l": {"family": "bernoulli_logit",
                  "terms": [[{"var": "v"}], [{"var": "d"}], [{"var": "l"}]]},
            "x_marginal": {"family": "bernoulli_logit",
                  "terms": [[{"var": "v"}], [{"var": "d"}]]},
            "y": {"family": "bernoulli_logit",
                  "terms": [[{"var": "v"}], [{"var": "d"}], [{"var": "l"}], [{"var": "x"}]]}
        },
        "mode": mode,
        "j": 40,
        "bootstrap": bootstrap,
        "seed": seed,
        "sd_units": false,
        "output_dir": dir.join("out")
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn acceptance_9_determinism_across_reruns_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 7, 16, "both");
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    let out3 = dir.path().join("run3");

    for (out, threads) in [(&out1, "1"), (&out2, "2"), (&out3, "1")] {
        let status = run_cli(&[
            "run",
            config.to_str().unwrap(),
            "--threads",
            threads,
            "--output-dir",
            out.to_str().unwrap(),
            "--quiet",
        ]);
        assert!(
            status.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&status.stderr)
        );
    }
    let a = std::fs::read(out1.join("effects.json")).unwrap();
    let b = std::fs::read(out2.join("effects.json")).unwrap();
    let c = std::fs::read(out3.join("effects.json")).unwrap();
    assert_eq!(a, b, "thread count changed the report bytes");
    assert_eq!(a, c, "rerun changed the report bytes");
    println!("ACCEPTANCE 9 (byte-identical reruns at any thread count): PASS");
}

#[test]
fn cli_numbers_match_direct_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), 99, 0, "both");
    let out = dir.path().join("out");
    let status = run_cli(&["run", config_path.to_str().unwrap(), "--quiet"]);
    assert!(status.status.success());

    let effects: medsim::sim::EffectReport =
        serde_json::from_slice(&std::fs::read(out.join("effects.json")).unwrap()).unwrap();

    // reproduce through the library with the same configuration
    let raw = std::fs::read_to_string(&config_path).unwrap();
    let cfg: serde_json::Value = serde_json::from_str(&raw).unwrap();
    let dgp = demo_binary_dgp();
    let ds = dgp.sample_dataset(500, 2024);
    assert_eq!(cfg["seed"], 99);
    let spec = medsim::pipeline::AnalysisSpec {
        engine: medsim::pipeline::EngineSpec::Parametric(medsim::pipeline::ParametricSpec {
            l: medsim::pipeline::GlmModelSpec {
                family: medsim::glm::Family::BernoulliLogit,
                terms: medsim::TermSpec::default().term(&["v"]).term(&["d"]).term(&["v", "d"]),
            },
            x_given_l: Some(medsim::pipeline::GlmModelSpec {
                family: medsim::glm::Family::BernoulliLogit,
                terms: medsim::TermSpec::default().term(&["v"]).term(&["d"]).term(&["l"]),
            }),
            x_marginal: Some(medsim::pipeline::GlmModelSpec {
                family: medsim::glm::Family::BernoulliLogit,
                terms: medsim::TermSpec::default().term(&["v"]).term(&["d"]),
            }),
            y: medsim::pipeline::GlmModelSpec {
                family: medsim::glm::Family::BernoulliLogit,
                terms: medsim::TermSpec::default()
                    .term(&["v"])
                    .term(&["d"])
                    .term(&["l"])
                    .term(&["x"]),
            },
        }),
        mode: medsim::sim::ReportMode::Both,
        j: 40,
        bootstrap_reps: 0,
        seed: 99,
        sd_units: false,
    };
    let direct = medsim::pipeline::run_analysis(&ds, &spec).unwrap();
    assert_eq!(direct.report.effects.len(), effects.effects.len());
    for (a, b) in direct.report.effects.iter().zip(&effects.effects) {
        assert_eq!(a.estimand, b.estimand);
        assert_eq!(a.point.to_bits(), b.point.to_bits(), "{:?}", a.estimand);
    }
}

#[test]
fn b0_reports_have_no_interval_fields() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 3, 0, "interventional");
    let status = run_cli(&["run", config.to_str().unwrap(), "--quiet"]);
    assert!(status.status.success());
    let json = std::fs::read_to_string(dir.path().join("out/effects.json")).unwrap();
    assert!(!json.contains("\"lower\""));
    assert!(!json.contains("\"upper\""));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["effects"].as_array().unwrap().len(), 3);
}

#[test]
fn validate_reports_problems_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 1, 0, "both");
    // bump j to the recommended scale so the clean config is warning-free
    // (validation never executes the run)
    let raw = std::fs::read_to_string(&config).unwrap();
    std::fs::write(&config, raw.replace("\"j\": 40", "\"j\": 2000")).unwrap();

    // valid config: exit 0, no problems
    let out = run_cli(&["validate", config.to_str().unwrap()]);
    assert!(out.status.success());
    let problems: Vec<serde_json::Value> =
        serde_json::from_slice(&out.stdout).unwrap();
    assert!(problems.is_empty(), "{problems:?}");

    // degenerate contrast: an error problem, exit 2
    let raw = std::fs::read_to_string(&config).unwrap();
    let bad = raw.replace("\"d_star\": 0.0", "\"d_star\": 1.0");
    let bad_path = dir.path().join("bad.json");
    std::fs::write(&bad_path, bad).unwrap();
    let out = run_cli(&["validate", bad_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let problems: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert!(problems
        .iter()
        .any(|p| p["severity"] == "error" && p["message"].as_str().unwrap().contains("degenerate")));

    // flow engine with a leftover models section: warning only, exit 0
    let raw = std::fs::read_to_string(&config).unwrap();
    let flowish = raw.replace("\"engine\": \"parametric\"", "\"engine\": \"flow\"");
    let flow_path = dir.path().join("flowish.json");
    std::fs::write(&flow_path, flowish).unwrap();
    let out = run_cli(&["validate", flow_path.to_str().unwrap()]);
    assert!(out.status.success());
    let problems: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert!(problems.iter().any(|p| p["severity"] == "warning"
        && p["message"].as_str().unwrap().contains("'models' section is ignored")));
    assert!(problems.iter().all(|p| p["severity"] != "error"));
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();

    // unparseable config -> 2
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{not json").unwrap();
    assert_eq!(run_cli(&["run", junk.to_str().unwrap()]).status.code(), Some(2));

    // missing data file -> 3
    let config = write_config(dir.path(), 1, 0, "both");
    let raw = std::fs::read_to_string(&config).unwrap();
    let missing = raw.replace("data.csv", "nope.csv");
    let missing_path = dir.path().join("missing.json");
    std::fs::write(&missing_path, missing).unwrap();
    let out = run_cli(&["run", missing_path.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // unfittable model (zero-variance mediator -> separation-like failure) -> 4
    let const_data = dir.path().join("const.csv");
    let mut csv = String::from("v,d,l,x,y\n");
    for i in 0..60 {
        // l equals d exactly: the l | v, d logit separates perfectly
        let d = i % 2;
        csv.push_str(&format!("{},{d},{d},{},{}\n", i % 2, (i / 2) % 2, (i / 3) % 2));
    }
    std::fs::write(&const_data, csv).unwrap();
    let raw = std::fs::read_to_string(&config).unwrap();
    let sep = raw.replace("data.csv", "const.csv");
    let sep_path = dir.path().join("sep.json");
    std::fs::write(&sep_path, sep).unwrap();
    let out = run_cli(&["run", sep_path.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failed_run_leaves_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 1, 0, "both");
    let raw = std::fs::read_to_string(&config).unwrap();
    let missing = raw.replace("data.csv", "nope.csv");
    let missing_path = dir.path().join("missing.json");
    std::fs::write(&missing_path, missing).unwrap();
    let out_dir = dir.path().join("out");
    let _ = run_cli(&["run", missing_path.to_str().unwrap(), "--quiet"]);
    assert!(!out_dir.join("effects.json").exists());
}

//! Pipeline execution and output writing.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use medsim::data::VariableSummary;
use medsim::flows::TrainReport;
use medsim::pipeline::{run_analysis, AnalysisResult};
use medsim::sim::EffectReport;
use medsim::{CausalDataset, Error};

use crate::config::RunConfig;

/// Exit codes: 2 config, 3 data, 4 model fit, 5 training divergence.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_FIT: i32 = 4;
pub const EXIT_TRAINING: i32 = 5;

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Data(_) => EXIT_DATA,
        Error::Fit(_) => EXIT_FIT,
        Error::Flow(f) => match f {
            medsim::FlowError::Diverged(_) | medsim::FlowError::NonFiniteLoss { .. } => {
                EXIT_TRAINING
            }
            _ => EXIT_FIT,
        },
        Error::Sim(_) => EXIT_FIT,
    }
}

#[derive(Serialize)]
struct Timings {
    total_seconds: f64,
    load_seconds: f64,
    analysis_seconds: f64,
}

/// Everything the run produced, echoing the configuration that produced it;
/// re-executing the echoed config with the same seed reproduces the run.
#[derive(Serialize)]
struct RunReport<'a> {
    config: &'a RunConfig,
    effects: &'a EffectReport,
    summaries: &'a [VariableSummary],
    warnings: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    train: &'a Option<TrainReport>,
    timings: Timings,
}

/// Tracks files written so a failed run leaves no partial outputs behind.
struct OutputTracker {
    written: Vec<PathBuf>,
}

impl OutputTracker {
    fn new() -> Self {
        OutputTracker { written: Vec::new() }
    }

    fn write(&mut self, path: &Path, contents: &[u8]) -> Result<(), String> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| format!("cannot create '{}': {e}", parent.display()))?;
        }
        let mut file = std::fs::File::create(path)
            .map_err(|e| format!("cannot create '{}': {e}", path.display()))?;
        self.written.push(path.to_path_buf());
        file.write_all(contents)
            .map_err(|e| format!("cannot write '{}': {e}", path.display()))
    }

    fn remove_partial_outputs(&self) {
        for path in &self.written {
            let _ = std::fs::remove_file(path);
        }
    }
}

pub fn execute(config: &RunConfig, quiet: bool) -> Result<(), (i32, String)> {
    let started = Instant::now();
    let schema = config
        .build_schema()
        .map_err(|e| (EXIT_CONFIG, format!("config error: {e}")))?;
    let spec = config
        .to_analysis_spec()
        .map_err(|e| (EXIT_CONFIG, format!("config error: {e}")))?;

    let ds = CausalDataset::load_csv(&config.data, &schema)
        .map_err(|e| (EXIT_DATA, format!("data error: {e}")))?;
    let loaded = Instant::now();

    let result: AnalysisResult =
        run_analysis(&ds, &spec).map_err(|e| (exit_code_for(&e), format!("run failed: {e}")))?;
    let analyzed = Instant::now();

    let out = &config.output_dir;
    let mut tracker = OutputTracker::new();
    let write_outputs = |tracker: &mut OutputTracker| -> Result<(), String> {
        let effects_json = serde_json::to_vec_pretty(&result.report)
            .map_err(|e| format!("cannot serialize effects: {e}"))?;
        tracker.write(&out.join("effects.json"), &effects_json)?;
        tracker.write(&out.join("effects.txt"), result.report.to_text_table().as_bytes())?;

        for (name, artifact) in &result.models {
            let json = serde_json::to_vec_pretty(artifact)
                .map_err(|e| format!("cannot serialize model '{name}': {e}"))?;
            tracker.write(&out.join("models").join(format!("{name}.json")), &json)?;
        }

        if let Some(train) = &result.train_report {
            let mut csv = String::from("restart,epoch,train_nll,val_nll\n");
            for r in &train.restarts {
                for e in &r.epochs {
                    csv.push_str(&format!(
                        "{},{},{},{}\n",
                        r.restart, e.epoch, e.train_nll, e.val_nll
                    ));
                }
            }
            tracker.write(&out.join("diagnostics").join("training.csv"), csv.as_bytes())?;
        }
        for diag in &result.transform_diagnostics {
            let mut csv = String::from("original,dequantized,transformed\n");
            for i in 0..diag.original.len() {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    diag.original[i], diag.dequantized[i], diag.transformed[i]
                ));
            }
            tracker.write(
                &out.join("diagnostics").join(format!("transform_{}.csv", diag.variable)),
                csv.as_bytes(),
            )?;
        }

        let report = RunReport {
            config,
            effects: &result.report,
            summaries: &result.summaries,
            warnings: &result.warnings,
            train: &result.train_report,
            timings: Timings {
                total_seconds: started.elapsed().as_secs_f64(),
                load_seconds: (loaded - started).as_secs_f64(),
                analysis_seconds: (analyzed - loaded).as_secs_f64(),
            },
        };
        let report_json = serde_json::to_vec_pretty(&report)
            .map_err(|e| format!("cannot serialize run report: {e}"))?;
        tracker.write(&out.join("run_report.json"), &report_json)?;
        Ok(())
    };

    if let Err(e) = write_outputs(&mut tracker) {
        tracker.remove_partial_outputs();
        return Err((EXIT_DATA, format!("output error: {e}")));
    }

    if !quiet {
        for w in &result.warnings {
            eprintln!("warning: {w}");
        }
        print!("{}", result.report.to_text_table());
        println!("outputs written to {}", out.display());
    }
    Ok(())
}

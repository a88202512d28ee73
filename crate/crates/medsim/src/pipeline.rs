//! End-to-end analysis: fit or train the conditional models, run the
//! simulation estimators, bootstrap the whole pipeline, and collect
//! artifacts (fitted models, training curves, transformation diagnostics).
//!
//! The command-line driver is a thin shell over [`run_analysis`]; every
//! number it reports is reproducible by calling this module directly.

use serde::{Deserialize, Serialize};

use crate::data::{CausalDataset, CausalSchema, VariableSummary};
use crate::error::{Error, SimError};
use crate::flows::{
    train_flows, FlowArchitecture, FlowModel, FlowVarSpec, TrainConfig, TrainReport,
};
use crate::glm::{fit_mle, Family, FittedGlm, TermSpec};
use crate::numeric::sample_sd;
use crate::rng::{RngKey, Tag};
use crate::sim::{
    attach_cis, bootstrap, bootstrap_replicate_seed, estimate_interventional,
    estimate_natural_pse, CondModel, EffectReport, Mode, ModelBundle, ReportMode, SimDriver,
};

/// Family and linear predictor for one conditional model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmModelSpec {
    pub family: Family,
    pub terms: TermSpec,
}

/// Parametric engine: per-variable model specifications.
///
/// `x_given_l` conditions on (V, D, L) and serves the natural/path-specific
/// procedure; `x_marginal` conditions on (V, D) only and serves the
/// interventional procedure. Each is required iff the requested mode uses
/// it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametricSpec {
    pub l: GlmModelSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_given_l: Option<GlmModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_marginal: Option<GlmModelSpec>,
    pub y: GlmModelSpec,
}

/// Flow engine: shared architecture, training configuration, and the
/// subsample size b used in place of the full n x J simulation grid.
#[derive(Debug, Clone, Serialize)]
pub struct FlowEngineSpec {
    pub architecture: FlowArchitecture,
    pub train: TrainConfig,
    pub subsample: u64,
}

#[derive(Debug, Clone, Serialize)]
pub enum EngineSpec {
    Parametric(ParametricSpec),
    Flow(FlowEngineSpec),
}

/// A full analysis request.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisSpec {
    pub engine: EngineSpec,
    pub mode: ReportMode,
    /// Monte Carlo replicates per sample member (parametric engine).
    pub j: u64,
    /// Bootstrap replicates; 0 disables interval estimation.
    pub bootstrap_reps: u64,
    pub seed: u64,
    /// Report effect sizes in standard-deviation units of the outcome.
    pub sd_units: bool,
}

/// A fitted model artifact for serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModelArtifact {
    Glm(FittedGlm),
    Flow(FlowModel),
}

/// Per-variable (original, dequantized, transformed) values for
/// transformation diagnostics of trained flows.
#[derive(Debug, Clone, Serialize)]
pub struct TransformDiagnostic {
    pub variable: String,
    pub original: Vec<f64>,
    pub dequantized: Vec<f64>,
    pub transformed: Vec<f64>,
}

#[derive(Debug)]
pub struct AnalysisResult {
    pub report: EffectReport,
    pub models: Vec<(String, FittedModelArtifact)>,
    pub summaries: Vec<VariableSummary>,
    pub train_report: Option<TrainReport>,
    pub transform_diagnostics: Vec<TransformDiagnostic>,
    pub warnings: Vec<String>,
}

struct Bundles {
    natural: Option<ModelBundle>,
    interventional: Option<ModelBundle>,
}

fn needs_natural(mode: ReportMode) -> bool {
    matches!(mode, ReportMode::NaturalPse | ReportMode::Both)
}

fn needs_interventional(mode: ReportMode) -> bool {
    matches!(mode, ReportMode::Interventional | ReportMode::Both)
}

fn fit_parametric(
    spec: &ParametricSpec,
    ds: &CausalDataset,
    mode: ReportMode,
) -> Result<(Bundles, Vec<(String, FittedModelArtifact)>), Error> {
    let schema = ds.schema();
    let l_name = schema.first_mediator().name.clone();
    let x_name = schema.second_mediator().name.clone();
    let y_name = schema.outcome().name.clone();

    let fit = |m: &GlmModelSpec, response: &str| -> Result<FittedGlm, Error> {
        fit_mle(m.family, &m.terms, response, ds).map_err(Error::Fit)
    };
    let model_l = fit(&spec.l, &l_name)?;
    let model_y = fit(&spec.y, &y_name)?;

    let mut artifacts = vec![
        ("l".to_string(), FittedModelArtifact::Glm(model_l.clone())),
        ("y".to_string(), FittedModelArtifact::Glm(model_y.clone())),
    ];

    let natural = if needs_natural(mode) {
        let mspec = spec.x_given_l.as_ref().ok_or_else(|| {
            SimError::Bundle("mode requires an x_given_l model specification".into())
        })?;
        let model_x = fit(mspec, &x_name)?;
        artifacts.push(("x_given_l".into(), FittedModelArtifact::Glm(model_x.clone())));
        Some(ModelBundle::new(
            Mode::NaturalPse,
            schema,
            CondModel::from_glm(model_l.clone(), schema)?,
            CondModel::from_glm(model_x, schema)?,
            CondModel::from_glm(model_y.clone(), schema)?,
        )?)
    } else {
        None
    };
    let interventional = if needs_interventional(mode) {
        let mspec = spec.x_marginal.as_ref().ok_or_else(|| {
            SimError::Bundle("mode requires an x_marginal model specification".into())
        })?;
        let model_x = fit(mspec, &x_name)?;
        artifacts.push(("x_marginal".into(), FittedModelArtifact::Glm(model_x.clone())));
        Some(ModelBundle::new(
            Mode::Interventional,
            schema,
            CondModel::from_glm(model_l.clone(), schema)?,
            CondModel::from_glm(model_x, schema)?,
            CondModel::from_glm(model_y.clone(), schema)?,
        )?)
    } else {
        None
    };
    Ok((Bundles { natural, interventional }, artifacts))
}

/// Flow specifications for the requested mode; mode `Both` trains four
/// flows (the focal mediator gets both conditioning sets).
pub fn flow_var_specs(
    schema: &CausalSchema,
    mode: ReportMode,
    arch: &FlowArchitecture,
) -> Vec<(String, FlowVarSpec)> {
    let conf: Vec<String> = schema.confounders().iter().map(|v| v.name.clone()).collect();
    let d = schema.treatment().name.clone();
    let l = schema.first_mediator().name.clone();
    let x = schema.second_mediator().name.clone();
    let y = schema.outcome().name.clone();

    let mut base = conf;
    base.push(d);
    let mut specs = vec![(
        "l".to_string(),
        FlowVarSpec { target: l.clone(), parents: base.clone(), architecture: arch.clone() },
    )];
    if needs_natural(mode) {
        let mut parents = base.clone();
        parents.push(l.clone());
        specs.push((
            "x_given_l".to_string(),
            FlowVarSpec { target: x.clone(), parents, architecture: arch.clone() },
        ));
    }
    if needs_interventional(mode) {
        specs.push((
            "x_marginal".to_string(),
            FlowVarSpec { target: x.clone(), parents: base.clone(), architecture: arch.clone() },
        ));
    }
    let mut parents_y = base;
    parents_y.push(l);
    parents_y.push(x);
    specs.push((
        "y".to_string(),
        FlowVarSpec { target: y, parents: parents_y, architecture: arch.clone() },
    ));
    specs
}

fn flow_bundles(
    schema: &CausalSchema,
    mode: ReportMode,
    keys: &[String],
    models: &[FlowModel],
) -> Result<Bundles, Error> {
    let find = |key: &str| -> Result<FlowModel, Error> {
        keys.iter()
            .position(|k| k == key)
            .map(|i| models[i].clone())
            .ok_or_else(|| SimError::Bundle(format!("missing trained flow '{key}'")).into())
    };
    let natural = if needs_natural(mode) {
        Some(ModelBundle::new(
            Mode::NaturalPse,
            schema,
            CondModel::from_flow(find("l")?, schema),
            CondModel::from_flow(find("x_given_l")?, schema),
            CondModel::from_flow(find("y")?, schema),
        )?)
    } else {
        None
    };
    let interventional = if needs_interventional(mode) {
        Some(ModelBundle::new(
            Mode::Interventional,
            schema,
            CondModel::from_flow(find("l")?, schema),
            CondModel::from_flow(find("x_marginal")?, schema),
            CondModel::from_flow(find("y")?, schema),
        )?)
    } else {
        None
    };
    Ok(Bundles { natural, interventional })
}

fn point_report(
    bundles: &Bundles,
    ds: &CausalDataset,
    driver: SimDriver,
    seed: u64,
) -> Result<EffectReport, Error> {
    match (&bundles.natural, &bundles.interventional) {
        (Some(nat), Some(int)) => {
            let n = estimate_natural_pse(nat, ds, driver, seed)?;
            let i = estimate_interventional(int, ds, driver, seed)?;
            Ok(i.merge(n))
        }
        (Some(nat), None) => estimate_natural_pse(nat, ds, driver, seed),
        (None, Some(int)) => estimate_interventional(int, ds, driver, seed),
        (None, None) => Err(SimError::Bundle("no estimation mode requested".into()).into()),
    }
}

/// Transformation diagnostics on up to 5000 rows: the raw value, its
/// dequantized version (discrete targets), and its image under the trained
/// flow. Well-trained flows produce transformed values close to N(0, 1).
pub fn transform_diagnostics(
    keys: &[String],
    models: &[FlowModel],
    ds: &CausalDataset,
    seed: u64,
) -> Vec<TransformDiagnostic> {
    let cap = ds.n_rows().min(5000);
    let noise_key = RngKey::new(seed).tagged(Tag::FlowDequant).child(u64::MAX - 1);
    keys.iter()
        .zip(models)
        .map(|(key, model)| {
            let mut original = Vec::with_capacity(cap);
            let mut dequantized = Vec::with_capacity(cap);
            let mut transformed = Vec::with_capacity(cap);
            for i in 0..cap {
                let row = ds.row(i);
                let raw = row[model.target_index];
                let deq = match model.dequantizer {
                    Some(dq) => {
                        let mut s = noise_key.stream_at(i as u64, model.target_index as u64, 0);
                        dq.dequantize(raw, &mut s)
                    }
                    None => raw,
                };
                let parents_std = model.standardize_parents(row);
                let c = model.embed(&parents_std);
                let z = model.forward_std(&c, model.target_standardizer.standardize(deq));
                original.push(raw);
                dequantized.push(deq);
                transformed.push(z);
            }
            TransformDiagnostic { variable: key.clone(), original, dequantized, transformed }
        })
        .collect()
}

/// Runs the full pipeline on a loaded dataset.
pub fn run_analysis(ds: &CausalDataset, spec: &AnalysisSpec) -> Result<AnalysisResult, Error> {
    let mut warnings = Vec::new();
    let summaries = ds.summarize();

    let (mut report, models, train_report, diagnostics) = match &spec.engine {
        EngineSpec::Parametric(pspec) => {
            if spec.j < 1 {
                return Err(SimError::Invalid("J must be at least 1".into()).into());
            }
            let driver = SimDriver::Replicates { j: spec.j };
            let (bundles, artifacts) = fit_parametric(pspec, ds, spec.mode)?;
            let mut report = point_report(&bundles, ds, driver, spec.seed)?;
            if spec.bootstrap_reps > 0 {
                let cis = bootstrap(
                    ds,
                    |resample, r| {
                        let (b, _) = fit_parametric(pspec, resample, spec.mode)?;
                        let rep = point_report(
                            &b,
                            resample,
                            driver,
                            bootstrap_replicate_seed(spec.seed, r),
                        )?;
                        Ok(rep.effects.iter().map(|e| e.point).collect())
                    },
                    spec.bootstrap_reps,
                    spec.seed,
                )?;
                attach_cis(&mut report, &cis, spec.bootstrap_reps);
            }
            (report, artifacts, None, Vec::new())
        }
        EngineSpec::Flow(fspec) => {
            let keyed = flow_var_specs(ds.schema(), spec.mode, &fspec.architecture);
            let keys: Vec<String> = keyed.iter().map(|(k, _)| k.clone()).collect();
            let var_specs: Vec<FlowVarSpec> = keyed.into_iter().map(|(_, s)| s).collect();
            let mut cfg = fspec.train.clone();
            cfg.seed = spec.seed;
            let (trained, train_report) =
                train_flows(&var_specs, ds, &cfg).map_err(Error::Flow)?;
            warnings.extend(train_report.warnings.iter().cloned());
            let bundles = flow_bundles(ds.schema(), spec.mode, &keys, &trained)?;
            let driver = SimDriver::Subsample { b: fspec.subsample };
            let mut report = point_report(&bundles, ds, driver, spec.seed)?;
            if spec.bootstrap_reps > 0 {
                warnings.push(
                    "bootstrap with the flow engine retrains all flows per replicate; \
                     this is expensive"
                        .to_string(),
                );
                let cis = bootstrap(
                    ds,
                    |resample, r| {
                        let mut rep_cfg = cfg.clone();
                        rep_cfg.seed = bootstrap_replicate_seed(spec.seed, r);
                        let (trained, _) = train_flows(&var_specs, resample, &rep_cfg)
                            .map_err(Error::Flow)?;
                        let b = flow_bundles(resample.schema(), spec.mode, &keys, &trained)?;
                        let rep = point_report(&b, resample, driver, rep_cfg.seed)?;
                        Ok(rep.effects.iter().map(|e| e.point).collect())
                    },
                    spec.bootstrap_reps,
                    spec.seed,
                )?;
                attach_cis(&mut report, &cis, spec.bootstrap_reps);
            }
            let diagnostics = transform_diagnostics(&keys, &trained, ds, spec.seed);
            let artifacts = keys
                .iter()
                .zip(&trained)
                .map(|(k, m)| (format!("flow_{k}"), FittedModelArtifact::Flow(m.clone())))
                .collect();
            (report, artifacts, Some(train_report), diagnostics)
        }
    };

    if spec.sd_units {
        let outcome = ds
            .column_by_name(&ds.schema().outcome().name)
            .expect("outcome exists");
        let sd = sample_sd(&outcome).ok_or_else(|| {
            Error::Sim(SimError::Invalid("outcome SD undefined for n < 2".into()))
        })?;
        report = report.to_sd_units(sd)?;
    }

    Ok(AnalysisResult {
        report,
        models,
        summaries,
        train_report,
        transform_diagnostics: diagnostics,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::demo_binary_dgp;
    use crate::sim::Estimand;

    fn parametric_spec() -> ParametricSpec {
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
                family: Family::BernoulliLogit,
                terms: TermSpec::saturated(&["v", "d", "l", "x"]),
            },
        }
    }

    #[test]
    fn both_modes_produce_all_nine_estimands_with_cis() {
        let ds = demo_binary_dgp().sample_dataset(400, 40);
        let spec = AnalysisSpec {
            engine: EngineSpec::Parametric(parametric_spec()),
            mode: ReportMode::Both,
            j: 16,
            bootstrap_reps: 24,
            seed: 5,
            sd_units: false,
        };
        let result = run_analysis(&ds, &spec).unwrap();
        assert_eq!(result.report.effects.len(), 9);
        for e in &result.report.effects {
            let (lo, hi) = (e.lower.unwrap(), e.upper.unwrap());
            assert!(lo <= e.point && e.point <= hi, "{:?}", e.estimand);
        }
        assert_eq!(result.models.len(), 4);
        assert_eq!(result.report.meta.bootstrap_reps, 24);
    }

    #[test]
    fn b0_omits_interval_fields() {
        let ds = demo_binary_dgp().sample_dataset(300, 41);
        let spec = AnalysisSpec {
            engine: EngineSpec::Parametric(parametric_spec()),
            mode: ReportMode::Interventional,
            j: 8,
            bootstrap_reps: 0,
            seed: 5,
            sd_units: false,
        };
        let result = run_analysis(&ds, &spec).unwrap();
        assert_eq!(result.report.effects.len(), 3);
        for e in &result.report.effects {
            assert!(e.lower.is_none() && e.upper.is_none());
        }
        let json = serde_json::to_string(&result.report).unwrap();
        assert!(!json.contains("lower"));
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let ds = demo_binary_dgp().sample_dataset(350, 42);
        let spec = AnalysisSpec {
            engine: EngineSpec::Parametric(parametric_spec()),
            mode: ReportMode::Both,
            j: 8,
            bootstrap_reps: 12,
            seed: 31,
            sd_units: true,
        };
        let a = run_analysis(&ds, &spec).unwrap();
        let b = run_analysis(&ds, &spec).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }

    #[test]
    fn missing_x_spec_for_mode_is_an_error() {
        let ds = demo_binary_dgp().sample_dataset(200, 43);
        let mut pspec = parametric_spec();
        pspec.x_given_l = None;
        let spec = AnalysisSpec {
            engine: EngineSpec::Parametric(pspec),
            mode: ReportMode::NaturalPse,
            j: 4,
            bootstrap_reps: 0,
            seed: 1,
            sd_units: false,
        };
        assert!(run_analysis(&ds, &spec).is_err());
    }

    #[test]
    fn sd_units_rescale_against_outcome_sd() {
        let ds = demo_binary_dgp().sample_dataset(400, 44);
        let base = AnalysisSpec {
            engine: EngineSpec::Parametric(parametric_spec()),
            mode: ReportMode::NaturalPse,
            j: 8,
            bootstrap_reps: 0,
            seed: 2,
            sd_units: false,
        };
        let raw = run_analysis(&ds, &base).unwrap();
        let scaled = run_analysis(&ds, &AnalysisSpec { sd_units: true, ..base }).unwrap();
        let sd = sample_sd(&ds.column_by_name("y").unwrap()).unwrap();
        let r = raw.report.point(Estimand::Ate).unwrap();
        let s = scaled.report.point(Estimand::Ate).unwrap();
        assert!((s - r / sd).abs() < 1e-15);
    }
}

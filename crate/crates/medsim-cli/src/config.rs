//! Run configuration: a versioned JSON document describing the data, the
//! causal roles, the modeling engine, and the estimation settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use medsim::flows::{FlowArchitecture, TrainConfig};
use medsim::glm::Family;
use medsim::pipeline::{
    AnalysisSpec, EngineSpec, FlowEngineSpec, GlmModelSpec, ParametricSpec,
};
use medsim::sim::ReportMode;
use medsim::{CausalSchema, TermSpec, Treatment, Variable, VariableKind};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarConfig {
    pub name: String,
    pub kind: VariableKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreatmentConfig {
    pub name: String,
    pub kind: VariableKind,
    pub d: f64,
    pub d_star: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub confounders: Vec<VarConfig>,
    pub treatment: TreatmentConfig,
    /// Exactly two, in causal order: the first mediator precedes the second.
    pub mediators: Vec<VarConfig>,
    pub outcome: VarConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub terms: TermSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelsConfig {
    pub l: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_given_l: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_marginal: Option<ModelConfig>,
    pub y: ModelConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    #[serde(default)]
    pub architecture: FlowArchitecture,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_subsample")]
    pub subsample: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            architecture: FlowArchitecture::default(),
            train: TrainConfig::default(),
            subsample: default_subsample(),
        }
    }
}

fn default_subsample() -> u64 {
    100_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Parametric,
    Flow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec_version: u32,
    pub data: PathBuf,
    pub schema: SchemaConfig,
    pub engine: EngineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<ModelsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    pub mode: ReportMode,
    #[serde(default = "default_j")]
    pub j: u64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sd_units: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_j() -> u64 {
    2000
}

fn default_bootstrap() -> u64 {
    2000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("medsim-output")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Serialize)]
pub struct Problem {
    pub severity: Severity,
    pub message: String,
}

impl Problem {
    fn error(message: impl Into<String>) -> Self {
        Problem { severity: Severity::Error, message: message.into() }
    }

    fn warning(message: impl Into<String>) -> Self {
        Problem { severity: Severity::Warning, message: message.into() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let file = std::fs::File::open(path)
            .map_err(|e| format!("cannot open config '{}': {e}", path.display()))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| format!("cannot parse config '{}': {e}", path.display()))
    }

    pub fn build_schema(&self) -> Result<CausalSchema, String> {
        if self.schema.mediators.len() != 2 {
            return Err(format!(
                "exactly two mediators are required (in causal order), got {}",
                self.schema.mediators.len()
            ));
        }
        let var = |v: &VarConfig| Variable::new(v.name.clone(), v.kind);
        CausalSchema::new(
            self.schema.confounders.iter().map(var).collect(),
            Treatment {
                name: self.schema.treatment.name.clone(),
                kind: self.schema.treatment.kind,
                d: self.schema.treatment.d,
                d_star: self.schema.treatment.d_star,
            },
            var(&self.schema.mediators[0]),
            var(&self.schema.mediators[1]),
            var(&self.schema.outcome),
        )
        .map_err(|e| e.to_string())
    }

    /// Reports every detectable problem at once; errors make the config
    /// unrunnable, warnings do not. `check_data_file` controls whether a
    /// missing data file is reported here (the run path leaves that to the
    /// loader so it surfaces as a data error, not a config error).
    pub fn validate(&self, check_data_file: bool) -> Vec<Problem> {
        let mut problems = Vec::new();
        if self.spec_version != SPEC_VERSION {
            problems.push(Problem::error(format!(
                "unsupported spec_version {} (expected {SPEC_VERSION})",
                self.spec_version
            )));
        }
        if check_data_file && !self.data.exists() {
            problems.push(Problem::error(format!(
                "data file '{}' does not exist",
                self.data.display()
            )));
        }
        let schema = match self.build_schema() {
            Ok(s) => Some(s),
            Err(e) => {
                problems.push(Problem::error(e));
                None
            }
        };
        if self.j < 1 {
            problems.push(Problem::error("j must be at least 1"));
        }
        if self.j < 1000 && self.engine == EngineKind::Parametric {
            problems.push(Problem::warning(format!(
                "j = {} is low; at least 1000 Monte Carlo replicates are recommended",
                self.j
            )));
        }
        if self.bootstrap == 1 {
            problems.push(Problem::error("bootstrap must be 0 (disabled) or >= 2"));
        }
        match self.engine {
            EngineKind::Parametric => {
                if self.flow.is_some() {
                    problems.push(Problem::warning(
                        "'flow' section is ignored with engine = parametric",
                    ));
                }
                match &self.models {
                    None => problems.push(Problem::error(
                        "engine = parametric requires a 'models' section",
                    )),
                    Some(models) => {
                        if needs_natural(self.mode) && models.x_given_l.is_none() {
                            problems.push(Problem::error(
                                "this mode requires models.x_given_l (X given V, D, L)",
                            ));
                        }
                        if needs_interventional(self.mode) && models.x_marginal.is_none() {
                            problems.push(Problem::error(
                                "this mode requires models.x_marginal (X given V, D)",
                            ));
                        }
                        if let Some(schema) = &schema {
                            check_family(&mut problems, schema, &models.l, &schema.first_mediator().name);
                            if let Some(x) = &models.x_given_l {
                                check_family(&mut problems, schema, x, &schema.second_mediator().name);
                            }
                            if let Some(x) = &models.x_marginal {
                                check_family(&mut problems, schema, x, &schema.second_mediator().name);
                            }
                            check_family(&mut problems, schema, &models.y, &schema.outcome().name);
                        }
                    }
                }
            }
            EngineKind::Flow => {
                if self.models.is_some() {
                    problems.push(Problem::warning(
                        "'models' section is ignored with engine = flow",
                    ));
                }
                let flow = self.flow.clone().unwrap_or_default();
                if flow.subsample < 1 {
                    problems.push(Problem::error("flow.subsample must be at least 1"));
                }
                if flow.subsample < 100_000 {
                    problems.push(Problem::warning(format!(
                        "flow.subsample = {} is low; b >= 100000 keeps subsampling error negligible",
                        flow.subsample
                    )));
                }
                let arch = &flow.architecture;
                if arch.embedding_hidden.len() < 4
                    || arch.integrand_hidden.len() < 4
                    || arch.embedding_hidden.iter().chain(&arch.integrand_hidden).any(|&w| w < 10)
                {
                    problems.push(Problem::warning(
                        "recommended flow architecture: at least four hidden layers with 10+ nodes each",
                    ));
                }
                if !(flow.train.validation_fraction > 0.0 && flow.train.validation_fraction < 1.0) {
                    problems.push(Problem::error("flow.train.validation_fraction must be in (0, 1)"));
                }
                if flow.train.restarts < 1 {
                    problems.push(Problem::error("flow.train.restarts must be at least 1"));
                }
                if self.bootstrap > 0 {
                    problems.push(Problem::warning(
                        "bootstrap with engine = flow retrains all flows per replicate; this is expensive",
                    ));
                }
            }
        }
        problems
    }

    /// Translates the validated config into a library analysis request.
    pub fn to_analysis_spec(&self) -> Result<AnalysisSpec, String> {
        let engine = match self.engine {
            EngineKind::Parametric => {
                let models = self
                    .models
                    .as_ref()
                    .ok_or("engine = parametric requires a 'models' section")?;
                let conv = |m: &ModelConfig| GlmModelSpec {
                    family: m.family,
                    terms: m.terms.clone(),
                };
                EngineSpec::Parametric(ParametricSpec {
                    l: conv(&models.l),
                    x_given_l: models.x_given_l.as_ref().map(conv),
                    x_marginal: models.x_marginal.as_ref().map(conv),
                    y: conv(&models.y),
                })
            }
            EngineKind::Flow => {
                let flow = self.flow.clone().unwrap_or_default();
                EngineSpec::Flow(FlowEngineSpec {
                    architecture: flow.architecture,
                    train: flow.train,
                    subsample: flow.subsample,
                })
            }
        };
        Ok(AnalysisSpec {
            engine,
            mode: self.mode,
            j: self.j,
            bootstrap_reps: self.bootstrap,
            seed: self.seed,
            sd_units: self.sd_units,
        })
    }
}

fn needs_natural(mode: ReportMode) -> bool {
    matches!(mode, ReportMode::NaturalPse | ReportMode::Both)
}

fn needs_interventional(mode: ReportMode) -> bool {
    matches!(mode, ReportMode::Interventional | ReportMode::Both)
}

fn check_family(
    problems: &mut Vec<Problem>,
    schema: &CausalSchema,
    model: &ModelConfig,
    response: &str,
) {
    let Some(kind) = schema.kind_of(response) else {
        return;
    };
    let ok = match (model.family, kind) {
        (Family::Gaussian, VariableKind::Continuous) => true,
        (Family::BernoulliLogit, VariableKind::Binary) => true,
        (Family::OrdinalLogit { levels: 2 }, VariableKind::Binary) => true,
        (Family::OrdinalLogit { levels }, VariableKind::Ordinal { levels: k }) => levels == k,
        (Family::PoissonLog, VariableKind::Count) => true,
        _ => false,
    };
    if !ok {
        problems.push(Problem::error(format!(
            "family {:?} is not compatible with response '{response}' of kind {kind:?}",
            model.family
        )));
    }
}

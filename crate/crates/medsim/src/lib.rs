//! Simulation-based causal mediation analysis with two causally ordered
//! mediators.
//!
//! Given a dataset with declared roles — baseline confounders `V`, a
//! treatment `D` with contrast values (d, d*), an initial mediator `L`, a
//! second mediator `X`, and an outcome `Y` — this crate estimates:
//!
//! - multivariate natural direct and indirect effects (MNDE / MNIE),
//! - path-specific effects through each mediator (`D -> Y`, `D -> X -> Y`,
//!   `D -> L ~> Y`),
//! - interventional direct and indirect effects (IDE / IIE) and the overall
//!   effect (OE), which treat `L` as a treatment-induced confounder of the
//!   `X -> Y` relationship.
//!
//! Estimation simulates potential outcomes from fitted conditional
//! distribution models of each mediator and the outcome. Two model layers
//! are provided: maximum-likelihood GLMs ([`glm`]) and conditional
//! normalizing flows built on unconstrained monotonic neural networks
//! ([`flows`]). Inference uses the nonparametric bootstrap with percentile
//! intervals ([`sim::bootstrap`]), refitting the full pipeline per
//! replicate.
//!
//! The [`oracle`] module evaluates the identification formulas exactly on
//! small discrete data-generating processes and provides closed-form effects
//! for linear-Gaussian processes; the test suites check the simulation
//! estimators against it.
//!
//! All randomness flows through counter-based streams ([`rng`]) addressed by
//! (seed, purpose, row, replicate, variable slot), so runs are bitwise
//! reproducible at any thread count, and counterfactual arms share
//! innovations (common random numbers): contrasts difference out simulation
//! noise exactly.

pub mod data;
pub mod error;
pub mod flows;
pub mod glm;
pub mod numeric;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod sim;

pub use data::{CausalDataset, CausalSchema, Treatment, Variable, VariableKind};
pub use error::{DataError, Error, FitError, FlowError, Result, SimError};
pub use glm::{Family, FittedGlm, TermSpec};
pub use sim::{
    CondModel, EffectReport, Estimand, LambdaAssignment, Mode, ModelBundle, PsiAssignment,
};

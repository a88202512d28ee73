//! Simulation estimators for mediation effects.
//!
//! Marginal potential-outcome means are approximated by sequential Monte
//! Carlo: for each sample member, mediators and outcome are drawn from
//! fitted conditional models under counterfactual treatment assignments and
//! averaged over replicates and members. Two families of means:
//!
//! - psi(d1, d2, d3): L drawn under d1, X drawn under d2 given the drawn L,
//!   Y drawn under d3 — natural/path-specific effects;
//! - lambda(d1, d2): L drawn under d2 and X drawn independently under d1
//!   from its marginal given (V, D) — interventional effects, which treat L
//!   as a treatment-induced confounder.
//!
//! Effects are differences of means computed once each, so decomposition
//! identities (ATE = MNDE + MNIE, ATE = sum of path-specific effects,
//! OE = IDE + IIE) hold to floating point, not just statistically.
//!
//! Random innovations are addressed by (purpose, position, replicate, slot),
//! identical across counterfactual arms: common random numbers. Under
//! models that ignore the treatment entirely, every arm draws bitwise
//! identical values and all effects are exactly zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CausalDataset, CausalSchema};
use crate::error::{Error, SimError};
use crate::flows::FlowModel;
use crate::glm::{Family, FittedGlm, ResolvedTerms};
use crate::numeric::{logistic, quantile_sorted};
use crate::rng::{RngKey, Stream, Tag};

/// Fixed parallel grain over rows; results do not depend on thread count.
const ROW_CHUNK: usize = 256;
/// Largest covariate-pattern table precomputed for discrete models.
const MAX_TABLE_PATTERNS: usize = 4096;
/// Bootstrap replicates may fail (e.g. a resample with an empty category)
/// up to this fraction before the whole run errors.
const BOOTSTRAP_FAILURE_LIMIT: f64 = 0.05;

const SLOT_L: u64 = 0;
const SLOT_X: u64 = 1;
const SLOT_Y: u64 = 2;

/// Which estimation procedure a model bundle serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// X is modeled given (V, D, L): multivariate natural and path-specific
    /// effects.
    NaturalPse,
    /// X is modeled given (V, D) only: interventional effects.
    Interventional,
}

/// Treatment assignment (d1, d2, d3) for psi: d1 feeds L, d2 feeds X, d3
/// feeds Y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiAssignment {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// Treatment assignment (d1, d2) for lambda: d1 feeds the randomized
/// mediator draw, d2 feeds L and Y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaAssignment {
    pub d1: f64,
    pub d2: f64,
}

/// Precomputed per-pattern sampling parameters of a model whose referenced
/// variables are all bounded discrete: the linear predictor and its
/// family-specific transforms are evaluated once per covariate pattern
/// (through the exact same code path as direct evaluation, so draws are
/// bitwise identical to the untabled path).
#[derive(Debug, Clone)]
struct EtaTable {
    vars: Vec<usize>,
    strides: Vec<usize>,
    dims: Vec<usize>,
    etas: Vec<f64>,
    params: PatternParams,
}

#[derive(Debug, Clone)]
enum PatternParams {
    /// P(1) per pattern.
    Bernoulli(Vec<f64>),
    /// Cumulative category probabilities per pattern (K-1 thresholds).
    Ordinal { cum: Vec<Vec<f64>> },
    /// Mean per pattern plus the common noise SD.
    Gaussian { sd: f64 },
    /// Rate and exp(-rate) per pattern.
    Poisson { mu: Vec<f64>, p0: Vec<f64> },
}

impl EtaTable {
    fn build(model: &FittedGlm, resolved: &ResolvedTerms, schema: &CausalSchema) -> Option<Self> {
        let vars = resolved.referenced_indices();
        let all = schema.variables();
        let mut dims = Vec::with_capacity(vars.len());
        for &v in &vars {
            dims.push(all[v].kind.level_count()? as usize);
        }
        let patterns: usize = dims.iter().product();
        if patterns == 0 || patterns > MAX_TABLE_PATTERNS {
            return None;
        }
        let mut strides = vec![1usize; vars.len()];
        for i in 1..vars.len() {
            strides[i] = strides[i - 1] * dims[i - 1];
        }
        let mut etas = Vec::with_capacity(patterns);
        let mut record = vec![0.0; schema.n_variables()];
        for pattern in 0..patterns {
            for (&v, (&stride, &dim)) in vars.iter().zip(strides.iter().zip(&dims)) {
                record[v] = ((pattern / stride) % dim) as f64;
            }
            etas.push(model.eta_resolved(resolved, &record));
        }
        let params = match model.family {
            Family::BernoulliLogit => {
                PatternParams::Bernoulli(etas.iter().map(|&e| logistic(e)).collect())
            }
            Family::OrdinalLogit { .. } => {
                let thresholds = model.thresholds.as_ref().expect("ordinal thresholds");
                let cum = etas
                    .iter()
                    .map(|&e| thresholds.iter().map(|t| logistic(t - e)).collect())
                    .collect();
                PatternParams::Ordinal { cum }
            }
            Family::Gaussian => PatternParams::Gaussian {
                sd: model.dispersion.expect("gaussian dispersion").sqrt(),
            },
            Family::PoissonLog => {
                let mu: Vec<f64> = etas.iter().map(|&e| e.exp()).collect();
                let p0 = mu.iter().map(|&m| (-m).exp()).collect();
                PatternParams::Poisson { mu, p0 }
            }
        };
        Some(EtaTable { vars, strides, dims, etas, params })
    }

    #[inline]
    fn pattern_index(&self, values: &[f64]) -> usize {
        let mut idx = 0usize;
        for ((&v, &stride), &dim) in self.vars.iter().zip(&self.strides).zip(&self.dims) {
            let level = values[v].round() as usize;
            debug_assert!(level < dim);
            idx += level * stride;
        }
        idx
    }

    #[cfg(test)]
    fn eta(&self, values: &[f64]) -> f64 {
        self.etas[self.pattern_index(values)]
    }

    /// Draws using the cached transforms; the transformed values were
    /// produced by the same expressions the direct path evaluates, so the
    /// draw is bitwise identical.
    #[inline]
    fn sample(&self, model: &FittedGlm, values: &[f64], stream: &mut Stream) -> f64 {
        let idx = self.pattern_index(values);
        match &self.params {
            PatternParams::Bernoulli(p) => {
                if stream.uniform() < p[idx] {
                    1.0
                } else {
                    0.0
                }
            }
            PatternParams::Ordinal { cum } => {
                let cum = &cum[idx];
                let u = stream.uniform();
                for (k, c) in cum.iter().enumerate() {
                    if u < *c {
                        return k as f64;
                    }
                }
                cum.len() as f64
            }
            PatternParams::Gaussian { sd } => self.etas[idx] + sd * stream.normal(),
            PatternParams::Poisson { mu, p0 } => {
                if mu[idx] > 500.0 {
                    // rare; fall back to the generic splitting sampler
                    return model.sample_with_eta(self.etas[idx], stream);
                }
                let u = stream.uniform();
                let mut p = p0[idx];
                let mut cum = p;
                let mut k = 0.0f64;
                while u > cum {
                    k += 1.0;
                    p *= mu[idx] / k;
                    cum += p;
                    if p < 1e-300 {
                        break;
                    }
                }
                k
            }
        }
    }
}

/// z-space requantization thresholds over all parent patterns of a flow
/// with a bounded discrete target and bounded discrete parents. A standard
/// normal draw z maps straight to level `#{thresholds below z}`, skipping
/// bisection entirely (the thresholds are the forward images of the bin
/// boundaries, so this agrees with invert-then-round).
#[derive(Debug, Clone)]
struct ZetaTable {
    vars: Vec<usize>,
    strides: Vec<usize>,
    dims: Vec<usize>,
    zetas: Vec<Vec<f64>>,
}

impl ZetaTable {
    fn build(model: &FlowModel, schema: &CausalSchema) -> Option<Self> {
        model.target_kind.level_count()?;
        let vars = model.parent_indices.clone();
        let all = schema.variables();
        let mut dims = Vec::with_capacity(vars.len());
        for &v in &vars {
            dims.push(all[v].kind.level_count()? as usize);
        }
        let patterns: usize = dims.iter().product();
        if patterns == 0 || patterns > MAX_TABLE_PATTERNS {
            return None;
        }
        let mut strides = vec![1usize; vars.len()];
        for i in 1..vars.len() {
            strides[i] = strides[i - 1] * dims[i - 1];
        }
        let mut zetas = Vec::with_capacity(patterns);
        let mut record = vec![0.0; schema.n_variables()];
        for pattern in 0..patterns {
            for (&v, (&stride, &dim)) in vars.iter().zip(strides.iter().zip(&dims)) {
                record[v] = ((pattern / stride) % dim) as f64;
            }
            let parents_std = model.standardize_parents(&record);
            let c = model.embed(&parents_std);
            zetas.push(model.discrete_bin_thresholds(&c).expect("bounded discrete target"));
        }
        Some(ZetaTable { vars, strides, dims, zetas })
    }

    #[inline]
    fn sample(&self, values: &[f64], stream: &mut Stream) -> f64 {
        let mut idx = 0usize;
        for ((&v, &stride), &dim) in self.vars.iter().zip(&self.strides).zip(&self.dims) {
            idx += (values[v].round() as usize % dim) * stride;
        }
        let z = stream.normal();
        self.zetas[idx].iter().filter(|&&t| z > t).count() as f64
    }
}

/// A fitted conditional model behind the common sampling interface: either
/// a maximum-likelihood GLM or a trained normalizing flow.
#[derive(Debug, Clone)]
pub struct CondModel(CondModelInner);

#[derive(Debug, Clone)]
enum CondModelInner {
    Glm {
        model: FittedGlm,
        resolved: ResolvedTerms,
        table: Option<EtaTable>,
    },
    Flow {
        model: FlowModel,
        table: Option<ZetaTable>,
    },
}

impl CondModel {
    pub fn from_glm(model: FittedGlm, schema: &CausalSchema) -> Result<Self, Error> {
        if !model.converged {
            return Err(SimError::Bundle(format!(
                "model for '{}' did not converge",
                model.response
            ))
            .into());
        }
        let resolved = ResolvedTerms::resolve(&model.terms, schema).map_err(Error::Fit)?;
        let table = EtaTable::build(&model, &resolved, schema);
        Ok(CondModel(CondModelInner::Glm { model, resolved, table }))
    }

    pub fn from_flow(model: FlowModel, schema: &CausalSchema) -> Self {
        let table = ZetaTable::build(&model, schema);
        CondModel(CondModelInner::Flow { model, table })
    }

    pub fn response(&self) -> &str {
        match &self.0 {
            CondModelInner::Glm { model, .. } => &model.response,
            CondModelInner::Flow { model, .. } => &model.target,
        }
    }

    fn conditioning_indices(&self) -> Vec<usize> {
        match &self.0 {
            CondModelInner::Glm { resolved, .. } => resolved.referenced_indices(),
            CondModelInner::Flow { model, .. } => model.parent_indices.clone(),
        }
    }

    #[inline]
    fn sample(&self, values: &[f64], stream: &mut Stream) -> Result<f64, Error> {
        match &self.0 {
            CondModelInner::Glm { model, resolved, table } => match table {
                Some(t) => Ok(t.sample(model, values, stream)),
                None => {
                    let eta = model.eta_resolved(resolved, values);
                    Ok(model.sample_with_eta(eta, stream))
                }
            },
            CondModelInner::Flow { model, table } => match table {
                Some(t) => Ok(t.sample(values, stream)),
                None => model.sample_from_record(values, stream).map_err(Error::Flow),
            },
        }
    }
}

/// The three conditional models of one estimation procedure, validated so
/// that each conditioning set is legal for the mode.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    mode: Mode,
    model_l: CondModel,
    model_x: CondModel,
    model_y: CondModel,
    d_index: usize,
    l_index: usize,
    x_index: usize,
}

impl ModelBundle {
    pub fn new(
        mode: Mode,
        schema: &CausalSchema,
        model_l: CondModel,
        model_x: CondModel,
        model_y: CondModel,
    ) -> Result<Self, Error> {
        let d_index = schema.treatment_index();
        let l_index = schema.first_mediator_index();
        let x_index = schema.second_mediator_index();

        let check = |model: &CondModel, expected_response: &str, allowed: &[usize]| {
            if model.response() != expected_response {
                return Err(SimError::Bundle(format!(
                    "expected a model for '{}', got one for '{}'",
                    expected_response,
                    model.response()
                )));
            }
            for idx in model.conditioning_indices() {
                if !allowed.contains(&idx) {
                    return Err(SimError::Bundle(format!(
                        "model for '{expected_response}' conditions on variable index {idx}, \
                         which is outside its allowed set for this mode"
                    )));
                }
            }
            Ok(())
        };

        let mut allowed_l: Vec<usize> = schema.confounder_indices().collect();
        allowed_l.push(d_index);
        let mut allowed_x = allowed_l.clone();
        if mode == Mode::NaturalPse {
            allowed_x.push(l_index);
        }
        let mut allowed_y: Vec<usize> = schema.confounder_indices().collect();
        allowed_y.extend([d_index, l_index, x_index]);

        check(&model_l, &schema.first_mediator().name, &allowed_l)?;
        check(&model_x, &schema.second_mediator().name, &allowed_x)?;
        check(&model_y, &schema.outcome().name, &allowed_y)?;

        Ok(ModelBundle { mode, model_l, model_x, model_y, d_index, l_index, x_index })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn models(&self) -> (&CondModel, &CondModel, &CondModel) {
        (&self.model_l, &self.model_x, &self.model_y)
    }
}

fn check_contrast_value(value: f64, schema: &CausalSchema, what: &str) -> Result<(), Error> {
    let t = schema.treatment();
    if value != t.d && value != t.d_star {
        return Err(SimError::Invalid(format!(
            "{what} = {value} is not one of the contrast values ({}, {})",
            t.d, t.d_star
        ))
        .into());
    }
    Ok(())
}

/// Core sequential-simulation mean over a list of row positions.
///
/// Streams are addressed by list position, so the same key yields common
/// random numbers across assignments regardless of which rows appear.
fn psi_mean(
    bundle: &ModelBundle,
    ds: &CausalDataset,
    rows: &[usize],
    j: u64,
    a: PsiAssignment,
    key: RngKey,
) -> Result<f64, Error> {
    let tag_key = key.tagged(Tag::PsiSim);
    let p = ds.schema().n_variables();
    let mut sums = vec![0.0f64; rows.len()];
    let outcomes: Vec<Result<(), Error>> = sums
        .par_chunks_mut(ROW_CHUNK)
        .enumerate()
        .map(|(ci, out)| {
            let mut values = vec![0.0f64; p];
            for (off, slot) in out.iter_mut().enumerate() {
                let k = ci * ROW_CHUNK + off;
                // every written slot (D, L, X) is refreshed before use in
                // each replicate, so the row is copied once
                values.copy_from_slice(ds.row(rows[k]));
                let row_key = tag_key.child(k as u64);
                let mut acc = 0.0;
                for rep in 0..j {
                    let rep_key = row_key.child(rep);
                    values[bundle.d_index] = a.d1;
                    let l = bundle
                        .model_l
                        .sample(&values, &mut rep_key.child(SLOT_L).stream())
                        .map_err(|e| sampling_err(rows[k], rep, e))?;
                    values[bundle.l_index] = l;
                    values[bundle.d_index] = a.d2;
                    let x = bundle
                        .model_x
                        .sample(&values, &mut rep_key.child(SLOT_X).stream())
                        .map_err(|e| sampling_err(rows[k], rep, e))?;
                    values[bundle.x_index] = x;
                    values[bundle.d_index] = a.d3;
                    let y = bundle
                        .model_y
                        .sample(&values, &mut rep_key.child(SLOT_Y).stream())
                        .map_err(|e| sampling_err(rows[k], rep, e))?;
                    acc += y;
                }
                *slot = acc;
            }
            Ok(())
        })
        .collect();
    for r in outcomes {
        r?;
    }
    Ok(sums.iter().sum::<f64>() / (rows.len() as f64 * j as f64))
}

fn lambda_mean(
    bundle: &ModelBundle,
    ds: &CausalDataset,
    rows: &[usize],
    j: u64,
    a: LambdaAssignment,
    key: RngKey,
) -> Result<f64, Error> {
    let tag_key = key.tagged(Tag::LambdaSim);
    let p = ds.schema().n_variables();
    let mut sums = vec![0.0f64; rows.len()];
    let outcomes: Vec<Result<(), Error>> = sums
        .par_chunks_mut(ROW_CHUNK)
        .enumerate()
        .map(|(ci, out)| {
            let mut values = vec![0.0f64; p];
            for (off, slot) in out.iter_mut().enumerate() {
                let k = ci * ROW_CHUNK + off;
                values.copy_from_slice(ds.row(rows[k]));
                let row_key = tag_key.child(k as u64);
                let mut acc = 0.0;
                for rep in 0..j {
                    let rep_key = row_key.child(rep);
                    // treatment-induced confounder under d2
                    values[bundle.d_index] = a.d2;
                    let l = bundle
                        .model_l
                        .sample(&values, &mut rep_key.child(SLOT_L).stream())
                        .map_err(|e| sampling_err(rows[k], rep, e))?;
                    // focal mediator drawn from its marginal under d1,
                    // independently of the draw above (its model may not
                    // condition on the first mediator)
                    values[bundle.d_index] = a.d1;
                    let x = bundle
                        .model_x
                        .sample(&values, &mut rep_key.child(SLOT_X).stream())
                        .map_err(|e| sampling_err(rows[k], rep, e))?;
                    values[bundle.d_index] = a.d2;
                    values[bundle.l_index] = l;
                    values[bundle.x_index] = x;
                    let y = bundle
                        .model_y
                        .sample(&values, &mut rep_key.child(SLOT_Y).stream())
                        .map_err(|e| sampling_err(rows[k], rep, e))?;
                    acc += y;
                }
                *slot = acc;
            }
            Ok(())
        })
        .collect();
    for r in outcomes {
        r?;
    }
    Ok(sums.iter().sum::<f64>() / (rows.len() as f64 * j as f64))
}

fn sampling_err(row: usize, replicate: u64, source: Error) -> Error {
    SimError::Sampling { row, replicate, source: Box::new(source) }.into()
}

/// Marginal mean of Y(d3, L(d1), X(d2, L(d1))) over the sample, J Monte
/// Carlo replicates per member.
pub fn simulate_psi(
    bundle: &ModelBundle,
    ds: &CausalDataset,
    a: PsiAssignment,
    j: u64,
    key: RngKey,
) -> Result<f64, Error> {
    if bundle.mode != Mode::NaturalPse {
        return Err(SimError::Bundle("psi simulation needs a natural-pse bundle".into()).into());
    }
    if j < 1 {
        return Err(SimError::Invalid("J must be at least 1".into()).into());
    }
    for (value, what) in [(a.d1, "d1"), (a.d2, "d2"), (a.d3, "d3")] {
        check_contrast_value(value, ds.schema(), what)?;
    }
    let rows: Vec<usize> = (0..ds.n_rows()).collect();
    psi_mean(bundle, ds, &rows, j, a, key)
}

/// Marginal mean of the randomized potential outcome Y(d2, X(d1 | V)).
pub fn simulate_lambda(
    bundle: &ModelBundle,
    ds: &CausalDataset,
    a: LambdaAssignment,
    j: u64,
    key: RngKey,
) -> Result<f64, Error> {
    if bundle.mode != Mode::Interventional {
        return Err(
            SimError::Bundle("lambda simulation needs an interventional bundle".into()).into(),
        );
    }
    if j < 1 {
        return Err(SimError::Invalid("J must be at least 1".into()).into());
    }
    for (value, what) in [(a.d1, "d1"), (a.d2, "d2")] {
        check_contrast_value(value, ds.schema(), what)?;
    }
    let rows: Vec<usize> = (0..ds.n_rows()).collect();
    lambda_mean(bundle, ds, &rows, j, a, key)
}

fn resampled_rows(ds: &CausalDataset, b: u64, key: RngKey) -> Vec<usize> {
    let n = ds.n_rows() as u64;
    let mut stream = key.tagged(Tag::SubsampleRows).stream();
    (0..b).map(|_| stream.below(n) as usize).collect()
}

/// Bootstrap-subsampled mean: b rows drawn with replacement, one simulated
/// value per drawn row (J = 1). Cheaper than the full grid when inversion
/// per draw is expensive, as with flows.
pub fn subsample_simulate_psi(
    bundle: &ModelBundle,
    ds: &CausalDataset,
    a: PsiAssignment,
    b: u64,
    key: RngKey,
) -> Result<f64, Error> {
    if bundle.mode != Mode::NaturalPse {
        return Err(SimError::Bundle("psi simulation needs a natural-pse bundle".into()).into());
    }
    if b < 1 {
        return Err(SimError::Invalid("b must be at least 1".into()).into());
    }
    let rows = resampled_rows(ds, b, key);
    psi_mean(bundle, ds, &rows, 1, a, key)
}

pub fn subsample_simulate_lambda(
    bundle: &ModelBundle,
    ds: &CausalDataset,
    a: LambdaAssignment,
    b: u64,
    key: RngKey,
) -> Result<f64, Error> {
    if bundle.mode != Mode::Interventional {
        return Err(
            SimError::Bundle("lambda simulation needs an interventional bundle".into()).into(),
        );
    }
    if b < 1 {
        return Err(SimError::Invalid("b must be at least 1".into()).into());
    }
    let rows = resampled_rows(ds, b, key);
    lambda_mean(bundle, ds, &rows, 1, a, key)
}

#[cfg(test)]
pub(crate) fn subsample_psi_with_rows(
    bundle: &ModelBundle,
    ds: &CausalDataset,
    a: PsiAssignment,
    rows: &[usize],
    key: RngKey,
) -> Result<f64, Error> {
    psi_mean(bundle, ds, rows, 1, a, key)
}

/// How marginal means are computed: the full n x J grid or a bootstrap
/// subsample of b draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimDriver {
    Replicates { j: u64 },
    Subsample { b: u64 },
}

/// The nine reportable estimands, in canonical report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "OE")]
    Oe,
    #[serde(rename = "IDE")]
    Ide,
    #[serde(rename = "IIE")]
    Iie,
    #[serde(rename = "ATE")]
    Ate,
    #[serde(rename = "MNDE")]
    Mnde,
    #[serde(rename = "MNIE")]
    Mnie,
    #[serde(rename = "PSE_DY")]
    PseDy,
    #[serde(rename = "PSE_DLY")]
    PseDly,
    #[serde(rename = "PSE_DXY")]
    PseDxy,
}

impl Estimand {
    pub fn label(self) -> &'static str {
        match self {
            Estimand::Oe => "OE",
            Estimand::Ide => "IDE",
            Estimand::Iie => "IIE",
            Estimand::Ate => "ATE",
            Estimand::Mnde => "MNDE",
            Estimand::Mnie => "MNIE",
            Estimand::PseDy => "PSE_DY",
            Estimand::PseDly => "PSE_DLY",
            Estimand::PseDxy => "PSE_DXY",
        }
    }

    /// Human-readable name for the aligned text table.
    pub fn pretty(self) -> &'static str {
        match self {
            Estimand::Oe => "OE",
            Estimand::Ide => "IDE",
            Estimand::Iie => "IIE",
            Estimand::Ate => "ATE",
            Estimand::Mnde => "MNDE",
            Estimand::Mnie => "MNIE",
            Estimand::PseDy => "PSE D->Y",
            Estimand::PseDly => "PSE D->L~>Y",
            Estimand::PseDxy => "PSE D->X->Y",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Raw,
    SdUnits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimand: Estimand,
    pub point: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    pub scale: Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportMode {
    NaturalPse,
    Interventional,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub mode: ReportMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<u64>,
    pub bootstrap_reps: u64,
    pub bootstrap_failed: u64,
    pub seed: u64,
}

/// Point estimates and (optionally) bootstrap percentile intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub effects: Vec<EffectEstimate>,
    pub meta: ReportMeta,
}

impl EffectReport {
    pub fn get(&self, estimand: Estimand) -> Option<&EffectEstimate> {
        self.effects.iter().find(|e| e.estimand == estimand)
    }

    pub fn point(&self, estimand: Estimand) -> Option<f64> {
        self.get(estimand).map(|e| e.point)
    }

    /// Merges two reports (e.g. interventional + natural) into one, keeping
    /// canonical estimand order.
    pub fn merge(mut self, mut other: EffectReport) -> EffectReport {
        self.effects.append(&mut other.effects);
        self.effects.sort_by_key(|e| e.estimand);
        self.meta.mode = ReportMode::Both;
        self.meta.j = self.meta.j.or(other.meta.j);
        self.meta.subsample = self.meta.subsample.or(other.meta.subsample);
        self
    }

    /// Rescales every point and interval bound by 1/sd (effect sizes in
    /// standard-deviation units of the outcome).
    pub fn to_sd_units(&self, outcome_sd: f64) -> Result<EffectReport, Error> {
        if !(outcome_sd > 0.0) {
            return Err(SimError::Invalid(format!(
                "outcome SD must be positive, got {outcome_sd}"
            ))
            .into());
        }
        let mut out = self.clone();
        for e in &mut out.effects {
            e.point /= outcome_sd;
            e.lower = e.lower.map(|v| v / outcome_sd);
            e.upper = e.upper.map(|v| v / outcome_sd);
            e.scale = Scale::SdUnits;
        }
        Ok(out)
    }

    /// Aligned plain-text table in canonical row order.
    pub fn to_text_table(&self) -> String {
        let has_ci = self.effects.iter().any(|e| e.lower.is_some());
        let mut out = String::new();
        if has_ci {
            out.push_str(&format!(
                "{:<14}{:>14}{:>14}{:>14}\n",
                "estimand", "point", "lower 2.5%", "upper 97.5%"
            ));
        } else {
            out.push_str(&format!("{:<14}{:>14}\n", "estimand", "point"));
        }
        for e in &self.effects {
            if has_ci {
                let fmt = |v: Option<f64>| {
                    v.map_or_else(|| format!("{:>14}", "-"), |x| format!("{x:>14.6}"))
                };
                out.push_str(&format!(
                    "{:<14}{:>14.6}{}{}\n",
                    e.estimand.pretty(),
                    e.point,
                    fmt(e.lower),
                    fmt(e.upper)
                ));
            } else {
                out.push_str(&format!("{:<14}{:>14.6}\n", e.estimand.pretty(), e.point));
            }
        }
        out
    }
}

fn driver_meta(driver: SimDriver) -> (Option<u64>, Option<u64>) {
    match driver {
        SimDriver::Replicates { j } => (Some(j), None),
        SimDriver::Subsample { b } => (None, Some(b)),
    }
}

/// Estimates ATE, MNDE, MNIE and the three path-specific effects from four
/// marginal means, each computed exactly once.
pub fn estimate_natural_pse(
    bundle: &ModelBundle,
    ds: &CausalDataset,
    driver: SimDriver,
    seed: u64,
) -> Result<EffectReport, Error> {
    let key = RngKey::new(seed);
    let t = ds.schema().treatment();
    let (d, d_star) = (t.d, t.d_star);
    let mm = |d1, d2, d3| -> Result<f64, Error> {
        let a = PsiAssignment { d1, d2, d3 };
        match driver {
            SimDriver::Replicates { j } => simulate_psi(bundle, ds, a, j, key),
            SimDriver::Subsample { b } => subsample_simulate_psi(bundle, ds, a, b, key),
        }
    };
    let psi_ssd = mm(d_star, d_star, d)?;
    let psi_sss = mm(d_star, d_star, d_star)?;
    let psi_sdd = mm(d_star, d, d)?;
    let psi_ddd = mm(d, d, d)?;

    let pse_dy = psi_ssd - psi_sss;
    let pse_dxy = psi_sdd - psi_ssd;
    let pse_dly = psi_ddd - psi_sdd;
    let mnde = pse_dy;
    let mnie = pse_dxy + pse_dly;
    let ate = mnde + mnie;

    let (j, subsample) = driver_meta(driver);
    let point = |estimand, point| EffectEstimate {
        estimand,
        point,
        lower: None,
        upper: None,
        scale: Scale::Raw,
    };
    Ok(EffectReport {
        effects: vec![
            point(Estimand::Ate, ate),
            point(Estimand::Mnde, mnde),
            point(Estimand::Mnie, mnie),
            point(Estimand::PseDy, pse_dy),
            point(Estimand::PseDly, pse_dly),
            point(Estimand::PseDxy, pse_dxy),
        ],
        meta: ReportMeta {
            mode: ReportMode::NaturalPse,
            j,
            subsample,
            bootstrap_reps: 0,
            bootstrap_failed: 0,
            seed,
        },
    })
}

/// Estimates OE, IDE, IIE from three marginal means, each computed once.
pub fn estimate_interventional(
    bundle: &ModelBundle,
    ds: &CausalDataset,
    driver: SimDriver,
    seed: u64,
) -> Result<EffectReport, Error> {
    let key = RngKey::new(seed);
    let t = ds.schema().treatment();
    let (d, d_star) = (t.d, t.d_star);
    let mm = |d1, d2| -> Result<f64, Error> {
        let a = LambdaAssignment { d1, d2 };
        match driver {
            SimDriver::Replicates { j } => simulate_lambda(bundle, ds, a, j, key),
            SimDriver::Subsample { b } => subsample_simulate_lambda(bundle, ds, a, b, key),
        }
    };
    let lam_sd = mm(d_star, d)?;
    let lam_ss = mm(d_star, d_star)?;
    let lam_dd = mm(d, d)?;

    let ide = lam_sd - lam_ss;
    let iie = lam_dd - lam_sd;
    let oe = ide + iie;

    let (j, subsample) = driver_meta(driver);
    let point = |estimand, point| EffectEstimate {
        estimand,
        point,
        lower: None,
        upper: None,
        scale: Scale::Raw,
    };
    Ok(EffectReport {
        effects: vec![
            point(Estimand::Oe, oe),
            point(Estimand::Ide, ide),
            point(Estimand::Iie, iie),
        ],
        meta: ReportMeta {
            mode: ReportMode::Interventional,
            j,
            subsample,
            bootstrap_reps: 0,
            bootstrap_failed: 0,
            seed,
        },
    })
}

/// Deterministic seed for one bootstrap replicate's simulation streams.
pub fn bootstrap_replicate_seed(seed: u64, replicate: u64) -> u64 {
    RngKey::new(seed)
        .tagged(Tag::BootReplicate)
        .child(replicate)
        .into_seed()
}

/// Per-estimand percentile bounds from the bootstrap distribution.
#[derive(Debug, Clone)]
pub struct BootstrapCis {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub completed: usize,
    pub failed: usize,
}

/// Nonparametric bootstrap over the full estimation pipeline.
///
/// For each replicate, n rows are resampled with replacement and the
/// `estimate` closure re-runs everything (model refits plus simulation) on
/// the resample, returning one value per estimand. Replicates whose
/// closure fails (e.g. refit separation on a degenerate resample) are
/// recorded and skipped; more than 5% failures aborts the run. Returns
/// 2.5/97.5 percentile bounds.
pub fn bootstrap<F>(
    ds: &CausalDataset,
    estimate: F,
    reps: u64,
    seed: u64,
) -> Result<BootstrapCis, Error>
where
    F: Fn(&CausalDataset, u64) -> Result<Vec<f64>, Error> + Sync,
{
    if reps < 2 {
        return Err(SimError::Invalid("bootstrap needs at least 2 replicates".into()).into());
    }
    let n = ds.n_rows() as u64;
    let key = RngKey::new(seed).tagged(Tag::BootResample);
    let results: Vec<Result<Vec<f64>, Error>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut stream = key.child(r).stream();
            let indices: Vec<usize> = (0..n).map(|_| stream.below(n) as usize).collect();
            let resample = ds.select_rows(&indices);
            estimate(&resample, r)
        })
        .collect();

    let mut completed: Vec<Vec<f64>> = Vec::with_capacity(results.len());
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok(v) => completed.push(v),
            Err(_) => failed += 1,
        }
    }
    if (failed as f64) > BOOTSTRAP_FAILURE_LIMIT * reps as f64 {
        return Err(SimError::BootstrapFailures {
            failed,
            total: reps as usize,
            limit_pct: BOOTSTRAP_FAILURE_LIMIT * 100.0,
        }
        .into());
    }
    let n_estimands = completed.first().map_or(0, Vec::len);
    let mut lower = Vec::with_capacity(n_estimands);
    let mut upper = Vec::with_capacity(n_estimands);
    for e in 0..n_estimands {
        let mut values: Vec<f64> = completed.iter().map(|v| v[e]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower.push(quantile_sorted(&values, 0.025));
        upper.push(quantile_sorted(&values, 0.975));
    }
    Ok(BootstrapCis { lower, upper, completed: completed.len(), failed })
}

/// Attaches bootstrap bounds to a point report, in the report's estimand
/// order. Bounds are widened to include the point estimate so that
/// lower <= point <= upper always holds.
pub fn attach_cis(report: &mut EffectReport, cis: &BootstrapCis, reps: u64) {
    for (e, (lo, hi)) in report.effects.iter_mut().zip(cis.lower.iter().zip(&cis.upper)) {
        e.lower = Some(lo.min(e.point));
        e.upper = Some(hi.max(e.point));
    }
    report.meta.bootstrap_reps = reps;
    report.meta.bootstrap_failed = cis.failed as u64;
}

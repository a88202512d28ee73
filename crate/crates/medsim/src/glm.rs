//! Parametric conditional distribution models fitted by maximum likelihood.
//!
//! Four families cover the mediator/outcome types this crate handles:
//! gaussian with identity link (continuous), bernoulli with logit link
//! (binary), proportional-odds cumulative logit (ordinal), and poisson with
//! log link (count). Every family is generative: a fitted model can draw
//! one value from its conditional distribution given a covariate record,
//! which is what the simulation estimators consume.
//!
//! Fitting is Newton-Raphson with step-halving, initialized at zero
//! coefficients (ordinal thresholds start at empirical cumulative logits),
//! so fits are deterministic: the same data and specification yield bitwise
//! identical coefficients.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{CausalDataset, CausalSchema, VariableKind};
use crate::error::FitError;
use crate::numeric::{ln_factorial, log1p_exp, logistic};
use crate::rng::Stream;

const MAX_ITERATIONS: usize = 100;
const GRADIENT_TOL: f64 = 1e-8;
const REL_LL_TOL: f64 = 1e-10;
/// |eta| beyond which a fitted probability is within 1e-10 of 0 or 1.
const SATURATION_ETA: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Linear regression with dispersion sigma^2 (maximum-likelihood, /n).
    Gaussian,
    BernoulliLogit,
    /// Proportional-odds cumulative model with `levels - 1` thresholds.
    OrdinalLogit { levels: u32 },
    PoissonLog,
}

impl Family {
    fn compatible_with(&self, kind: VariableKind) -> bool {
        match (self, kind) {
            (Family::Gaussian, VariableKind::Continuous) => true,
            (Family::BernoulliLogit, VariableKind::Binary) => true,
            (Family::OrdinalLogit { levels: 2 }, VariableKind::Binary) => true,
            (Family::OrdinalLogit { levels }, VariableKind::Ordinal { levels: k }) => *levels == k,
            (Family::PoissonLog, VariableKind::Count) => true,
            _ => false,
        }
    }

    /// Ordinal models absorb the intercept into the thresholds.
    fn has_intercept(&self) -> bool {
        !matches!(self, Family::OrdinalLogit { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermFactor {
    pub var: String,
    #[serde(default = "default_power")]
    pub power: u32,
}

fn default_power() -> u32 {
    1
}

/// A linear predictor: a list of product terms plus an implicit intercept.
///
/// Each term multiplies one or more `variable^power` factors, so `d`, `l`,
/// `d*l`, and `l^2` are all single terms. Terms are canonicalized (factors
/// sorted by name, repeated variables merged) and duplicates are rejected.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermSpec {
    terms: Vec<Vec<TermFactor>>,
}

impl TermSpec {
    /// Intercept-only predictor.
    pub fn intercept_only() -> Self {
        TermSpec::default()
    }

    /// Adds a product term with all powers equal to one.
    pub fn term(self, vars: &[&str]) -> Self {
        let factors: Vec<(&str, u32)> = vars.iter().map(|v| (*v, 1)).collect();
        self.term_pow(&factors)
    }

    /// Adds a product term with explicit powers.
    pub fn term_pow(mut self, factors: &[(&str, u32)]) -> Self {
        let mut merged: Vec<TermFactor> = Vec::new();
        for &(var, power) in factors {
            assert!(power >= 1, "term powers must be >= 1");
            match merged.iter_mut().find(|f| f.var == var) {
                Some(f) => f.power += power,
                None => merged.push(TermFactor { var: var.to_string(), power }),
            }
        }
        merged.sort_by(|a, b| a.var.cmp(&b.var));
        self.terms.push(merged);
        self
    }

    /// Main effects for each variable.
    pub fn main_effects(vars: &[&str]) -> Self {
        vars.iter().fold(TermSpec::default(), |spec, v| spec.term(&[v]))
    }

    /// All interaction products over the given variables (every non-empty
    /// subset), i.e. a saturated predictor for discrete covariates.
    pub fn saturated(vars: &[&str]) -> Self {
        let mut spec = TermSpec::default();
        for mask in 1u32..(1 << vars.len()) {
            let subset: Vec<&str> = vars
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, v)| *v)
                .collect();
            spec = spec.term(&subset);
        }
        spec
    }

    pub fn terms(&self) -> &[Vec<TermFactor>] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Canonical form: factors sorted by name, repeated variables merged.
    /// Hand-built specs are canonical already; deserialized ones may not be.
    pub fn canonicalized(&self) -> TermSpec {
        let mut out = TermSpec::default();
        for term in &self.terms {
            let factors: Vec<(&str, u32)> =
                term.iter().map(|f| (f.var.as_str(), f.power)).collect();
            out = out.term_pow(&factors);
        }
        out
    }

    fn check_no_duplicates(&self) -> Result<(), FitError> {
        for (i, a) in self.terms.iter().enumerate() {
            for b in &self.terms[i + 1..] {
                if a == b {
                    return Err(FitError::Spec(format!(
                        "duplicate term {}",
                        format_term(a)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Names of all variables referenced by any term.
    pub fn referenced(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .terms
            .iter()
            .flat_map(|t| t.iter().map(|f| f.var.as_str()))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn format_term(factors: &[TermFactor]) -> String {
    if factors.is_empty() {
        return "1".to_string();
    }
    factors
        .iter()
        .map(|f| {
            if f.power == 1 {
                f.var.clone()
            } else {
                format!("{}^{}", f.var, f.power)
            }
        })
        .collect::<Vec<_>>()
        .join("*")
}

/// Evaluates the design row `[1, term values...]` for a named record.
pub fn design_row(
    terms: &TermSpec,
    record: &HashMap<String, f64>,
) -> Result<Vec<f64>, FitError> {
    let mut row = Vec::with_capacity(terms.len() + 1);
    row.push(1.0);
    for term in terms.terms() {
        let mut value = 1.0;
        for factor in term {
            let x = *record
                .get(&factor.var)
                .ok_or_else(|| FitError::Spec(format!("missing variable '{}'", factor.var)))?;
            value *= x.powi(factor.power as i32);
        }
        row.push(value);
    }
    Ok(row)
}

/// Term factors resolved to dataset column indices for fast evaluation.
#[derive(Debug, Clone)]
pub(crate) struct ResolvedTerms {
    factors: Vec<Vec<(usize, u32)>>,
}

impl ResolvedTerms {
    pub(crate) fn resolve(terms: &TermSpec, schema: &CausalSchema) -> Result<Self, FitError> {
        let factors = terms
            .terms()
            .iter()
            .map(|term| {
                term.iter()
                    .map(|f| {
                        schema
                            .index_of(&f.var)
                            .map(|idx| (idx, f.power))
                            .ok_or_else(|| {
                                FitError::Spec(format!("missing variable '{}'", f.var))
                            })
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        Ok(ResolvedTerms { factors })
    }

    #[inline]
    pub(crate) fn fill_design_row(&self, values: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.factors.len());
        for (slot, term) in out.iter_mut().zip(&self.factors) {
            let mut v = 1.0;
            for &(idx, power) in term {
                v *= values[idx].powi(power as i32);
            }
            *slot = v;
        }
    }

    pub(crate) fn referenced_indices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .factors
            .iter()
            .flat_map(|t| t.iter().map(|&(i, _)| i))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub(crate) fn len(&self) -> usize {
        self.factors.len()
    }
}

/// A maximum-likelihood fit of one conditional distribution.
///
/// For ordinal models `coefficients` holds one value per term and the
/// intercept role is played by the thresholds; all other families store
/// `[intercept, terms...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedGlm {
    pub family: Family,
    pub terms: TermSpec,
    pub response: String,
    pub coefficients: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FittedGlm {
    /// Linear predictor for a record of raw values in schema order.
    #[inline]
    pub(crate) fn eta_resolved(&self, resolved: &ResolvedTerms, values: &[f64]) -> f64 {
        let mut buf = [0.0f64; 32];
        let k = resolved.len();
        debug_assert!(k <= 32);
        resolved.fill_design_row(values, &mut buf[..k]);
        if self.family.has_intercept() {
            let mut eta = self.coefficients[0];
            for (c, x) in self.coefficients[1..].iter().zip(&buf[..k]) {
                eta += c * x;
            }
            eta
        } else {
            let mut eta = 0.0;
            for (c, x) in self.coefficients.iter().zip(&buf[..k]) {
                eta += c * x;
            }
            eta
        }
    }

    /// Linear predictor for a named record.
    pub fn linear_predictor(&self, record: &HashMap<String, f64>) -> Result<f64, FitError> {
        let row = design_row(&self.terms, record)?;
        if self.family.has_intercept() {
            Ok(self
                .coefficients
                .iter()
                .zip(row.iter())
                .map(|(c, x)| c * x)
                .sum())
        } else {
            Ok(self
                .coefficients
                .iter()
                .zip(row[1..].iter())
                .map(|(c, x)| c * x)
                .sum())
        }
    }

    /// Draws one value from the fitted conditional distribution.
    pub fn sample(&self, record: &HashMap<String, f64>, stream: &mut Stream) -> Result<f64, FitError> {
        let eta = self.linear_predictor(record)?;
        Ok(self.sample_with_eta(eta, stream))
    }

    #[inline]
    pub(crate) fn sample_with_eta(&self, eta: f64, stream: &mut Stream) -> f64 {
        match self.family {
            Family::Gaussian => {
                eta + self.dispersion.expect("gaussian dispersion").sqrt() * stream.normal()
            }
            Family::BernoulliLogit => {
                if stream.uniform() < logistic(eta) {
                    1.0
                } else {
                    0.0
                }
            }
            Family::OrdinalLogit { levels } => {
                let thresholds = self.thresholds.as_ref().expect("ordinal thresholds");
                let u = stream.uniform();
                for (k, t) in thresholds.iter().enumerate() {
                    if u < logistic(t - eta) {
                        return k as f64;
                    }
                }
                (levels - 1) as f64
            }
            Family::PoissonLog => sample_poisson(eta.exp(), stream),
        }
    }

    /// Category/event probabilities for discrete families with finite
    /// support (`None` for gaussian and poisson).
    pub fn event_probs(&self, record: &HashMap<String, f64>) -> Result<Option<Vec<f64>>, FitError> {
        let eta = self.linear_predictor(record)?;
        Ok(self.event_probs_with_eta(eta))
    }

    pub(crate) fn event_probs_with_eta(&self, eta: f64) -> Option<Vec<f64>> {
        match self.family {
            Family::BernoulliLogit => {
                let p = logistic(eta);
                Some(vec![1.0 - p, p])
            }
            Family::OrdinalLogit { levels } => {
                let thresholds = self.thresholds.as_ref().expect("ordinal thresholds");
                let mut probs = Vec::with_capacity(levels as usize);
                let mut prev = 0.0;
                for t in thresholds {
                    let c = logistic(t - eta);
                    probs.push(c - prev);
                    prev = c;
                }
                probs.push(1.0 - prev);
                Some(probs)
            }
            _ => None,
        }
    }
}

/// Poisson sampler by sequential search on the inverse CDF; large rates are
/// split recursively so `exp(-mu)` never underflows.
fn sample_poisson(mu: f64, stream: &mut Stream) -> f64 {
    if mu > 500.0 {
        let half = mu / 2.0;
        return sample_poisson(half, stream) + sample_poisson(mu - half, stream);
    }
    let u = stream.uniform();
    let mut p = (-mu).exp();
    let mut cum = p;
    let mut k = 0.0f64;
    while u > cum {
        k += 1.0;
        p *= mu / k;
        cum += p;
        if p < 1e-300 {
            break;
        }
    }
    k
}

/// Fits `response ~ terms` on the dataset by maximum likelihood.
pub fn fit_mle(
    family: Family,
    terms: &TermSpec,
    response: &str,
    ds: &CausalDataset,
) -> Result<FittedGlm, FitError> {
    let terms = &terms.canonicalized();
    terms.check_no_duplicates()?;
    let schema = ds.schema();
    let response_kind = schema
        .kind_of(response)
        .ok_or_else(|| FitError::Spec(format!("missing variable '{response}'")))?;
    if !family.compatible_with(response_kind) {
        return Err(FitError::Spec(format!(
            "family {family:?} is not compatible with response '{response}' of kind {response_kind:?}"
        )));
    }
    if terms.referenced().contains(&response) {
        return Err(FitError::Spec(format!(
            "terms must not reference the response '{response}'"
        )));
    }
    let resolved = ResolvedTerms::resolve(terms, schema)?;
    let y = ds
        .column_by_name(response)
        .expect("response column exists");
    let n = ds.n_rows();

    // Design matrix without the intercept column; the intercept is handled
    // per family.
    let q = resolved.len();
    let mut design = vec![0.0f64; n * q];
    for i in 0..n {
        resolved.fill_design_row(ds.row(i), &mut design[i * q..(i + 1) * q]);
    }

    let n_params = match family {
        Family::OrdinalLogit { levels } => q + (levels as usize - 1),
        _ => q + 1,
    };
    if n <= n_params {
        return Err(FitError::Spec(format!(
            "n = {n} does not exceed the parameter count {n_params}"
        )));
    }

    match family {
        Family::Gaussian => fit_gaussian(terms, response, &design, &y, n, q),
        Family::BernoulliLogit => fit_logit_like(family, terms, response, &design, &y, n, q),
        Family::PoissonLog => fit_logit_like(family, terms, response, &design, &y, n, q),
        Family::OrdinalLogit { levels } => {
            fit_ordinal(levels, terms, response, &design, &y, n, q)
        }
    }
}

fn design_value(design: &[f64], q: usize, i: usize, j: usize) -> f64 {
    // j = 0 is the intercept; j >= 1 indexes terms.
    if j == 0 {
        1.0
    } else {
        design[i * q + (j - 1)]
    }
}

/// Gaussian fit: Newton on beta (the normal equations, with iterative
/// refinement until the true-likelihood gradient passes the tolerance),
/// then the maximum-likelihood dispersion RSS/n.
fn fit_gaussian(
    terms: &TermSpec,
    response: &str,
    design: &[f64],
    y: &[f64],
    n: usize,
    q: usize,
) -> Result<FittedGlm, FitError> {
    let p = q + 1;
    let mut beta = vec![0.0f64; p];
    let mut iterations = 0;
    let mut converged = false;
    let mut sigma2 = f64::NAN;
    let mut grad_norm = f64::INFINITY;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        // residuals and gradient X'r
        let mut grad = vec![0.0f64; p];
        let mut hess = vec![0.0f64; p * p];
        let mut rss = 0.0;
        for i in 0..n {
            let mut eta = beta[0];
            for j in 1..p {
                eta += beta[j] * design_value(design, q, i, j);
            }
            let r = y[i] - eta;
            rss += r * r;
            for j in 0..p {
                let xj = design_value(design, q, i, j);
                grad[j] += xj * r;
                for m in j..p {
                    hess[j * p + m] += xj * design_value(design, q, i, m);
                }
            }
        }
        mirror_upper(&mut hess, p);
        sigma2 = rss / n as f64;
        if sigma2 <= 0.0 {
            return Err(FitError::Spec(
                "zero residual variance: the gaussian response is perfectly fitted".into(),
            ));
        }
        // gradient of the profiled log-likelihood is X'r / sigma^2
        grad_norm = grad.iter().map(|g| (g / sigma2).abs()).fold(0.0, f64::max);
        if grad_norm <= GRADIENT_TOL {
            converged = true;
            break;
        }
        let delta = cholesky_solve(&hess, &grad, p)
            .map_err(|e| FitError::Singular(format!("gaussian normal equations: {e}")))?;
        for j in 0..p {
            beta[j] += delta[j];
        }
    }

    if !converged {
        return Err(FitError::NonConvergence {
            iterations,
            gradient_norm: grad_norm,
            last_coefficients: beta,
        });
    }
    let log_likelihood =
        -0.5 * n as f64 * ((std::f64::consts::TAU * sigma2).ln() + 1.0);
    Ok(FittedGlm {
        family: Family::Gaussian,
        terms: terms.clone(),
        response: response.to_string(),
        coefficients: beta,
        dispersion: Some(sigma2),
        thresholds: None,
        log_likelihood,
        converged,
        iterations,
    })
}

/// Shared Newton machinery for bernoulli-logit and poisson-log.
fn fit_logit_like(
    family: Family,
    terms: &TermSpec,
    response: &str,
    design: &[f64],
    y: &[f64],
    n: usize,
    q: usize,
) -> Result<FittedGlm, FitError> {
    let p = q + 1;
    let loglik = |beta: &[f64]| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            let mut eta = beta[0];
            for j in 1..p {
                eta += beta[j] * design_value(design, q, i, j);
            }
            ll += match family {
                Family::BernoulliLogit => y[i] * eta - log1p_exp(eta),
                Family::PoissonLog => y[i] * eta - eta.exp() - ln_factorial(y[i] as u64),
                _ => unreachable!(),
            };
        }
        ll
    };

    let mut beta = vec![0.0f64; p];
    let mut ll = loglik(&beta);
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut prev_coef_norm = 0.0f64;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let mut grad = vec![0.0f64; p];
        let mut hess = vec![0.0f64; p * p];
        let mut max_abs_eta = 0.0f64;
        for i in 0..n {
            let mut eta = beta[0];
            for j in 1..p {
                eta += beta[j] * design_value(design, q, i, j);
            }
            max_abs_eta = max_abs_eta.max(eta.abs());
            let (resid, w) = match family {
                Family::BernoulliLogit => {
                    let mu = logistic(eta);
                    (y[i] - mu, mu * (1.0 - mu))
                }
                Family::PoissonLog => {
                    let mu = eta.exp();
                    (y[i] - mu, mu)
                }
                _ => unreachable!(),
            };
            for j in 0..p {
                let xj = design_value(design, q, i, j);
                grad[j] += xj * resid;
                for m in j..p {
                    hess[j * p + m] += w * xj * design_value(design, q, i, m);
                }
            }
        }
        mirror_upper(&mut hess, p);
        grad_norm = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        if grad_norm <= GRADIENT_TOL {
            converged = true;
            break;
        }

        let coef_norm = beta.iter().map(|b| b.abs()).fold(0.0, f64::max);
        if family == Family::BernoulliLogit
            && max_abs_eta > SATURATION_ETA
            && coef_norm > prev_coef_norm
            && iterations >= 5
        {
            return Err(FitError::Separation { max_coef: coef_norm });
        }
        prev_coef_norm = coef_norm;

        let delta = cholesky_solve(&hess, &grad, p)
            .map_err(|e| FitError::Singular(format!("{family:?} information matrix: {e}")))?;
        // step-halving line search
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> =
                beta.iter().zip(&delta).map(|(b, d)| b + alpha * d).collect();
            let ll_new = loglik(&candidate);
            if ll_new.is_finite() && ll_new >= ll - 1e-13 * ll.abs().max(1.0) {
                let rel_change = (ll_new - ll).abs() / ll.abs().max(1e-10);
                beta = candidate;
                ll = ll_new;
                accepted = true;
                if rel_change <= REL_LL_TOL {
                    // final gradient check happens at the top of the next pass
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if !converged {
        return Err(FitError::NonConvergence {
            iterations,
            gradient_norm: grad_norm,
            last_coefficients: beta,
        });
    }
    Ok(FittedGlm {
        family,
        terms: terms.clone(),
        response: response.to_string(),
        coefficients: beta,
        dispersion: None,
        thresholds: None,
        log_likelihood: ll,
        converged,
        iterations,
    })
}

/// Proportional-odds cumulative logit fit.
///
/// Parameters are (thresholds t_0 < ... < t_{K-2}, slopes); the linear
/// predictor has no intercept. P(Y <= k) = logistic(t_k - eta).
fn fit_ordinal(
    levels: u32,
    terms: &TermSpec,
    response: &str,
    design: &[f64],
    y: &[f64],
    n: usize,
    q: usize,
) -> Result<FittedGlm, FitError> {
    let k_levels = levels as usize;
    let n_thresh = k_levels - 1;
    let p = n_thresh + q;

    // category counts and empirical-cumulative-logit threshold starts
    let mut counts = vec![0usize; k_levels];
    for &yi in y {
        counts[yi.round() as usize] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(FitError::Spec(format!(
            "response category {k} has no observations"
        )));
    }
    let mut theta = vec![0.0f64; p];
    let mut cum = 0usize;
    for k in 0..n_thresh {
        cum += counts[k];
        let frac = cum as f64 / n as f64;
        theta[k] = (frac / (1.0 - frac)).ln();
    }

    let cats: Vec<usize> = y.iter().map(|v| v.round() as usize).collect();

    let loglik = |theta: &[f64]| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            let mut eta = 0.0;
            for j in 0..q {
                eta += theta[n_thresh + j] * design[i * q + j];
            }
            let k = cats[i];
            let upper = if k < n_thresh { logistic(theta[k] - eta) } else { 1.0 };
            let lower = if k > 0 { logistic(theta[k - 1] - eta) } else { 0.0 };
            ll += (upper - lower).max(1e-300).ln();
        }
        ll
    };

    let thresholds_increasing =
        |theta: &[f64]| theta[..n_thresh].windows(2).all(|w| w[0] < w[1]);

    let mut ll = loglik(&theta);
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut prev_coef_norm = 0.0f64;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let mut grad = vec![0.0f64; p];
        let mut hess_neg = vec![0.0f64; p * p]; // negative Hessian (positive definite)
        let mut max_abs_u = 0.0f64;

        for i in 0..n {
            let xrow = &design[i * q..(i + 1) * q];
            let mut eta = 0.0;
            for j in 0..q {
                eta += theta[n_thresh + j] * xrow[j];
            }
            let k = cats[i];
            let (a, f_a, fp_a, has_a) = if k < n_thresh {
                let u = theta[k] - eta;
                max_abs_u = max_abs_u.max(u.abs());
                let s = logistic(u);
                let f = s * (1.0 - s);
                (s, f, f * (1.0 - 2.0 * s), true)
            } else {
                (1.0, 0.0, 0.0, false)
            };
            let (b, f_b, fp_b, has_b) = if k > 0 {
                let u = theta[k - 1] - eta;
                max_abs_u = max_abs_u.max(u.abs());
                let s = logistic(u);
                let f = s * (1.0 - s);
                (s, f, f * (1.0 - 2.0 * s), true)
            } else {
                (0.0, 0.0, 0.0, false)
            };
            let prob = (a - b).max(1e-300);

            let d_ua = f_a / prob;
            let d_ub = -f_b / prob;
            // second derivatives in (u_a, u_b)
            let h_aa = fp_a / prob - (f_a / prob) * (f_a / prob);
            let h_bb = -fp_b / prob - (f_b / prob) * (f_b / prob);
            let h_ab = f_a * f_b / (prob * prob);

            // gradient
            if has_a {
                grad[k] += d_ua;
            }
            if has_b {
                grad[k - 1] += d_ub;
            }
            let d_eta = -(d_ua + d_ub);
            for j in 0..q {
                grad[n_thresh + j] += d_eta * xrow[j];
            }

            // negative Hessian accumulation
            if has_a {
                hess_neg[k * p + k] -= h_aa;
            }
            if has_b {
                hess_neg[(k - 1) * p + (k - 1)] -= h_bb;
            }
            if has_a && has_b {
                hess_neg[k.min(k - 1) * p + k.max(k - 1)] -= h_ab;
            }
            let beta_coef = h_aa + 2.0 * h_ab + h_bb;
            for j in 0..q {
                let col = n_thresh + j;
                if has_a {
                    hess_neg[k * p + col] -= -(h_aa + h_ab) * xrow[j];
                }
                if has_b {
                    hess_neg[(k - 1) * p + col] -= -(h_bb + h_ab) * xrow[j];
                }
                for m in j..q {
                    hess_neg[col * p + (n_thresh + m)] -= beta_coef * xrow[j] * xrow[m];
                }
            }
        }
        mirror_upper(&mut hess_neg, p);
        grad_norm = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        if grad_norm <= GRADIENT_TOL {
            converged = true;
            break;
        }

        let coef_norm = theta.iter().map(|b| b.abs()).fold(0.0, f64::max);
        if max_abs_u > SATURATION_ETA && coef_norm > prev_coef_norm && iterations >= 5 {
            return Err(FitError::Separation { max_coef: coef_norm });
        }
        prev_coef_norm = coef_norm;

        let delta = cholesky_solve(&hess_neg, &grad, p)
            .map_err(|e| FitError::Singular(format!("ordinal information matrix: {e}")))?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> =
                theta.iter().zip(&delta).map(|(b, d)| b + alpha * d).collect();
            if thresholds_increasing(&candidate) {
                let ll_new = loglik(&candidate);
                if ll_new.is_finite() && ll_new >= ll - 1e-13 * ll.abs().max(1.0) {
                    theta = candidate;
                    ll = ll_new;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if !converged {
        return Err(FitError::NonConvergence {
            iterations,
            gradient_norm: grad_norm,
            last_coefficients: theta,
        });
    }
    let thresholds = theta[..n_thresh].to_vec();
    let coefficients = theta[n_thresh..].to_vec();
    Ok(FittedGlm {
        family: Family::OrdinalLogit { levels },
        terms: terms.clone(),
        response: response.to_string(),
        coefficients,
        dispersion: None,
        thresholds: Some(thresholds),
        log_likelihood: ll,
        converged,
        iterations,
    })
}

fn mirror_upper(matrix: &mut [f64], p: usize) {
    for j in 0..p {
        for m in 0..j {
            matrix[j * p + m] = matrix[m * p + j];
        }
    }
}

/// Solves A x = b for symmetric positive-definite A via Cholesky.
fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Result<Vec<f64>, String> {
    let mut l = vec![0.0f64; p * p];
    for j in 0..p {
        let mut diag = a[j * p + j];
        for k in 0..j {
            diag -= l[j * p + k] * l[j * p + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(format!("non-positive pivot at column {j}"));
        }
        let diag = diag.sqrt();
        l[j * p + j] = diag;
        for i in (j + 1)..p {
            let mut v = a[i * p + j];
            for k in 0..j {
                v -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = v / diag;
        }
    }
    // forward then backward substitution
    let mut z = vec![0.0f64; p];
    for i in 0..p {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * p + k] * z[k];
        }
        z[i] = v / l[i * p + i];
    }
    let mut x = vec![0.0f64; p];
    for i in (0..p).rev() {
        let mut v = z[i];
        for k in (i + 1)..p {
            v -= l[k * p + i] * x[k];
        }
        x[i] = v / l[i * p + i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CausalSchema, Treatment, Variable};
    use crate::rng::RngKey;

    fn record(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn schema_with_y(kind: VariableKind) -> CausalSchema {
        CausalSchema::new(
            vec![Variable::new("v", VariableKind::Continuous)],
            Treatment { name: "d".into(), kind: VariableKind::Binary, d: 1.0, d_star: 0.0 },
            Variable::new("l", VariableKind::Continuous),
            Variable::new("x", VariableKind::Continuous),
            Variable::new("y", kind),
        )
        .unwrap()
    }

    fn dataset_with_y(kind: VariableKind, ys: &[f64]) -> CausalDataset {
        let rows: Vec<Vec<f64>> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| vec![i as f64 * 0.1, (i % 2) as f64, 0.0, 0.0, y])
            .collect();
        CausalDataset::new(schema_with_y(kind), rows).unwrap()
    }

    #[test]
    fn design_row_examples() {
        let spec = TermSpec::default().term(&["d"]).term(&["l"]).term(&["d", "l"]);
        let row = design_row(&spec, &record(&[("d", 2.0), ("l", 3.0)])).unwrap();
        assert_eq!(row, vec![1.0, 2.0, 3.0, 6.0]);

        let row = design_row(&TermSpec::intercept_only(), &record(&[])).unwrap();
        assert_eq!(row, vec![1.0]);

        let spec = TermSpec::default().term_pow(&[("l", 2)]);
        let row = design_row(&spec, &record(&[("l", -2.0)])).unwrap();
        assert_eq!(row, vec![1.0, 4.0]);

        let err = design_row(&spec, &record(&[("d", 1.0)])).unwrap_err();
        assert!(err.to_string().contains("'l'"));
    }

    #[test]
    fn duplicate_terms_rejected() {
        let spec = TermSpec::default().term(&["d", "l"]).term(&["l", "d"]);
        let ds = dataset_with_y(VariableKind::Continuous, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let err = fit_mle(Family::Gaussian, &spec, "y", &ds).unwrap_err();
        assert!(err.to_string().contains("duplicate term"));
    }

    #[test]
    fn intercept_only_logit_balanced() {
        let ds = dataset_with_y(VariableKind::Binary, &[0.0, 1.0, 0.0, 1.0]);
        let fit = fit_mle(Family::BernoulliLogit, &TermSpec::intercept_only(), "y", &ds).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].abs() < 1e-6, "{}", fit.coefficients[0]);
    }

    #[test]
    fn gaussian_intercept_only_mle() {
        let ds = dataset_with_y(VariableKind::Continuous, &[1.0, 2.0, 3.0]);
        let fit = fit_mle(Family::Gaussian, &TermSpec::intercept_only(), "y", &ds).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        // MLE divides by n
        assert!((fit.dispersion.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let expected_ll =
            -0.5 * 3.0 * ((std::f64::consts::TAU * (2.0 / 3.0)).ln() + 1.0);
        assert!((fit.log_likelihood - expected_ll).abs() < 1e-10);
    }

    #[test]
    fn reported_loglik_matches_pointwise_evaluation() {
        // independent pointwise evaluation of each family's log density
        let ys = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let ds = dataset_with_y(VariableKind::Binary, &ys);
        let fit = fit_mle(
            Family::BernoulliLogit,
            &TermSpec::default().term(&["v"]),
            "y",
            &ds,
        )
        .unwrap();
        let mut ll = 0.0;
        for i in 0..ds.n_rows() {
            let v = ds.row(i)[0];
            let y = ds.row(i)[4];
            let p = logistic(fit.coefficients[0] + fit.coefficients[1] * v);
            ll += if y == 1.0 { p.ln() } else { (1.0 - p).ln() };
        }
        assert!((ll - fit.log_likelihood).abs() < 1e-8);

        let ys = [0.0, 3.0, 1.0, 2.0, 4.0, 0.0, 1.0, 2.0];
        let ds = dataset_with_y(VariableKind::Count, &ys);
        let fit = fit_mle(Family::PoissonLog, &TermSpec::default().term(&["v"]), "y", &ds).unwrap();
        let mut ll = 0.0;
        for i in 0..ds.n_rows() {
            let v = ds.row(i)[0];
            let y = ds.row(i)[4];
            let mu: f64 = (fit.coefficients[0] + fit.coefficients[1] * v).exp();
            ll += y * mu.ln() - mu - ln_factorial(y as u64);
        }
        assert!((ll - fit.log_likelihood).abs() < 1e-8);
    }

    #[test]
    fn nesting_property() {
        let ys = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let ds = dataset_with_y(VariableKind::Binary, &ys);
        let null = fit_mle(Family::BernoulliLogit, &TermSpec::intercept_only(), "y", &ds).unwrap();
        let full = fit_mle(
            Family::BernoulliLogit,
            &TermSpec::default().term(&["v"]).term(&["d"]),
            "y",
            &ds,
        )
        .unwrap();
        assert!(full.log_likelihood >= null.log_likelihood - 1e-12);
    }

    #[test]
    fn fit_is_deterministic_bitwise() {
        let ys = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let ds = dataset_with_y(VariableKind::Binary, &ys);
        let spec = TermSpec::default().term(&["v"]).term(&["d"]);
        let a = fit_mle(Family::BernoulliLogit, &spec, "y", &ds).unwrap();
        let b = fit_mle(Family::BernoulliLogit, &spec, "y", &ds).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
        assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
    }

    #[test]
    fn separation_is_detected() {
        // y = 1 exactly when v > 0.55: perfectly separated
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let v = i as f64 * 0.1;
                vec![v, 0.0, 0.0, 0.0, if v > 0.55 { 1.0 } else { 0.0 }]
            })
            .collect();
        let ds = CausalDataset::new(schema_with_y(VariableKind::Binary), rows).unwrap();
        let err = fit_mle(Family::BernoulliLogit, &TermSpec::default().term(&["v"]), "y", &ds)
            .unwrap_err();
        assert!(
            matches!(err, FitError::Separation { .. }),
            "expected separation, got {err:?}"
        );
    }

    #[test]
    fn incompatible_family_rejected() {
        let ds = dataset_with_y(VariableKind::Binary, &[0.0, 1.0, 0.0, 1.0]);
        assert!(fit_mle(Family::Gaussian, &TermSpec::intercept_only(), "y", &ds).is_err());
        assert!(fit_mle(Family::PoissonLog, &TermSpec::intercept_only(), "y", &ds).is_err());
    }

    #[test]
    fn ordinal_fit_recovers_category_frequencies() {
        // intercept-only ordinal: fitted category probabilities equal the
        // empirical frequencies
        let ys = [0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let schema = CausalSchema::new(
            vec![Variable::new("v", VariableKind::Continuous)],
            Treatment { name: "d".into(), kind: VariableKind::Binary, d: 1.0, d_star: 0.0 },
            Variable::new("l", VariableKind::Continuous),
            Variable::new("x", VariableKind::Continuous),
            Variable::new("y", VariableKind::Ordinal { levels: 3 }),
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = ys
            .iter()
            .map(|&y| vec![0.0, 0.0, 0.0, 0.0, y])
            .collect();
        let ds = CausalDataset::new(schema, rows).unwrap();
        let fit = fit_mle(
            Family::OrdinalLogit { levels: 3 },
            &TermSpec::intercept_only(),
            "y",
            &ds,
        )
        .unwrap();
        let probs = fit.event_probs(&record(&[])).unwrap().unwrap();
        assert!((probs[0] - 0.3).abs() < 1e-6);
        assert!((probs[1] - 0.2).abs() < 1e-6);
        assert!((probs[2] - 0.5).abs() < 1e-6);
        let t = fit.thresholds.unwrap();
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ordinal_missing_category_is_an_error() {
        let ys = [0.0, 0.0, 2.0, 2.0, 2.0, 0.0, 2.0, 0.0];
        let schema = CausalSchema::new(
            vec![Variable::new("v", VariableKind::Continuous)],
            Treatment { name: "d".into(), kind: VariableKind::Binary, d: 1.0, d_star: 0.0 },
            Variable::new("l", VariableKind::Continuous),
            Variable::new("x", VariableKind::Continuous),
            Variable::new("y", VariableKind::Ordinal { levels: 3 }),
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = ys.iter().map(|&y| vec![0.0, 0.0, 0.0, 0.0, y]).collect();
        let ds = CausalDataset::new(schema, rows).unwrap();
        let err = fit_mle(
            Family::OrdinalLogit { levels: 3 },
            &TermSpec::intercept_only(),
            "y",
            &ds,
        )
        .unwrap_err();
        assert!(err.to_string().contains("category 1"));
    }

    #[test]
    fn event_probs_sum_to_one() {
        let ds = dataset_with_y(VariableKind::Binary, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        let fit =
            fit_mle(Family::BernoulliLogit, &TermSpec::default().term(&["v"]), "y", &ds).unwrap();
        for v in [-3.0, 0.0, 2.5] {
            let p = fit.event_probs(&record(&[("v", v)])).unwrap().unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_pmf_sums_to_one() {
        let ys = [0.0, 3.0, 1.0, 2.0, 4.0, 0.0, 1.0, 2.0];
        let ds = dataset_with_y(VariableKind::Count, &ys);
        let fit = fit_mle(Family::PoissonLog, &TermSpec::intercept_only(), "y", &ds).unwrap();
        let mu: f64 = fit.coefficients[0].exp();
        let mut p = (-mu).exp();
        let mut total = p;
        for k in 1..200 {
            p *= mu / k as f64;
            total += p;
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_bernoulli_eta_is_extreme() {
        let fit = FittedGlm {
            family: Family::BernoulliLogit,
            terms: TermSpec::intercept_only(),
            response: "y".into(),
            coefficients: vec![20.0],
            dispersion: None,
            thresholds: None,
            log_likelihood: 0.0,
            converged: true,
            iterations: 1,
        };
        let mut stream = RngKey::new(1).stream();
        for _ in 0..64 {
            assert_eq!(fit.sample_with_eta(20.0, &mut stream), 1.0);
        }
    }

    #[test]
    fn ordinal_degenerate_thresholds_force_category() {
        // thresholds (-40, +40): category 1 has probability ~1
        let fit = FittedGlm {
            family: Family::OrdinalLogit { levels: 3 },
            terms: TermSpec::intercept_only(),
            response: "y".into(),
            coefficients: vec![],
            dispersion: None,
            thresholds: Some(vec![-40.0, 40.0]),
            log_likelihood: 0.0,
            converged: true,
            iterations: 1,
        };
        let mut stream = RngKey::new(2).stream();
        for _ in 0..64 {
            assert_eq!(fit.sample_with_eta(0.0, &mut stream), 1.0);
        }
    }

    #[test]
    fn sampling_frequencies_match_probabilities() {
        // logistic(eta) = 0.3
        let eta = (0.3f64 / 0.7).ln();
        let fit = FittedGlm {
            family: Family::BernoulliLogit,
            terms: TermSpec::intercept_only(),
            response: "y".into(),
            coefficients: vec![eta],
            dispersion: None,
            thresholds: None,
            log_likelihood: 0.0,
            converged: true,
            iterations: 1,
        };
        let key = RngKey::new(99);
        let n = 100_000u64;
        let mut ones = 0u64;
        for i in 0..n {
            let mut s = key.stream_at(i, 0, 0);
            if fit.sample_with_eta(eta, &mut s) == 1.0 {
                ones += 1;
            }
        }
        let freq = ones as f64 / n as f64;
        assert!((0.29..=0.31).contains(&freq), "freq = {freq}");
    }

    #[test]
    fn poisson_sampler_moments() {
        let mu = 4.2f64;
        let key = RngKey::new(5);
        let n = 100_000u64;
        let (mut m, mut m2) = (0.0, 0.0);
        for i in 0..n {
            let mut s = key.stream_at(i, 0, 0);
            let k = sample_poisson(mu, &mut s);
            m += k;
            m2 += k * k;
        }
        m /= n as f64;
        m2 /= n as f64;
        let var = m2 - m * m;
        // SE of the mean is sqrt(mu/n) ~ 0.0065
        assert!((m - mu).abs() < 4.0 * (mu / n as f64).sqrt(), "mean {m}");
        assert!((var - mu).abs() < 0.15, "var {var}");
    }

    #[test]
    fn poisson_large_rate_split_preserves_mean() {
        let mu = 1500.0f64;
        let key = RngKey::new(6);
        let n = 20_000u64;
        let mut m = 0.0;
        for i in 0..n {
            let mut s = key.stream_at(i, 0, 0);
            m += sample_poisson(mu, &mut s);
        }
        m /= n as f64;
        assert!((m - mu).abs() < 4.0 * (mu / n as f64).sqrt(), "mean {m}");
    }

    #[test]
    fn glm_serializes_to_json_and_back() {
        let ds = dataset_with_y(VariableKind::Binary, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        let fit =
            fit_mle(Family::BernoulliLogit, &TermSpec::default().term(&["v"]), "y", &ds).unwrap();
        let json = serde_json::to_string(&fit).unwrap();
        let back: FittedGlm = serde_json::from_str(&json).unwrap();
        assert_eq!(fit, back);
    }
}

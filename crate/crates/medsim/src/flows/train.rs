//! Joint negative-log-likelihood training of conditional flows.
//!
//! All flows in a bundle train simultaneously by minimizing the sum of their
//! per-variable NLLs with mini-batch SGD (with momentum and a cosine
//! learning-rate decay). Gradients are exact reverse-mode gradients of the
//! discretized objective, differentiating through the quadrature sum.
//!
//! The NLL is expressed in raw data units (the standardization Jacobian is
//! included), so a flow trained on conditionally gaussian data can be
//! compared directly against the gaussian differential entropy.
//!
//! Determinism: the batch is cut into fixed-size chunks whose gradient
//! contributions are computed in parallel but combined in chunk order, so
//! training is bitwise reproducible at any thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{CausalDataset, CausalSchema};
use crate::error::FlowError;
use crate::numeric::{mean, sample_sd};
use crate::rng::{RngKey, Tag};
use crate::sim::Mode;

use super::nn::MlpGrads;
use super::{FlowArchitecture, FlowModel, QuadratureRule, Standardizer};

/// Fixed parallel grain (not configurable: it shapes the floating-point
/// summation tree, so it must not vary with the machine).
const CHUNK_ROWS: usize = 128;

const LN_2PI: f64 = 1.8378770664093453;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Initial learning rate; decays along a cosine schedule to zero at
    /// `max_epochs`.
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    /// Early-stopping patience, in validation evaluations (one per epoch).
    pub patience: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Overrides the architecture's quadrature resolution when set.
    pub quadrature_nodes: Option<usize>,
    /// Warn when the training split is smaller than this; the flows need
    /// samples in the tens of thousands for reliable estimates.
    pub min_train_warning: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            learning_rate: 1e-3,
            momentum: 0.9,
            max_epochs: 200,
            validation_fraction: 0.20,
            patience: 10,
            restarts: 5,
            seed: 0,
            quadrature_nodes: None,
            min_train_warning: 16_000,
        }
    }
}

/// What to train a flow for: target variable, conditioning set, shape.
#[derive(Debug, Clone)]
pub struct FlowVarSpec {
    pub target: String,
    pub parents: Vec<String>,
    pub architecture: FlowArchitecture,
}

/// Flow specifications for the three modeled variables under a mode:
/// L | V,D and Y | V,D,L,X always; X | V,D,L when the mediators are modeled
/// jointly, X | V,D when the focal-mediator distribution is randomized.
pub fn specs_for_mode(
    schema: &CausalSchema,
    mode: Mode,
    arch: &FlowArchitecture,
) -> Vec<FlowVarSpec> {
    let conf: Vec<String> = schema.confounders().iter().map(|v| v.name.clone()).collect();
    let d = schema.treatment().name.clone();
    let l = schema.first_mediator().name.clone();
    let x = schema.second_mediator().name.clone();
    let y = schema.outcome().name.clone();

    let mut parents_l = conf.clone();
    parents_l.push(d.clone());
    let mut parents_x = conf.clone();
    parents_x.push(d.clone());
    if mode == Mode::NaturalPse {
        parents_x.push(l.clone());
    }
    let mut parents_y = conf;
    parents_y.push(d);
    parents_y.push(l.clone());
    parents_y.push(x.clone());

    vec![
        FlowVarSpec { target: l, parents: parents_l, architecture: arch.clone() },
        FlowVarSpec { target: x, parents: parents_x, architecture: arch.clone() },
        FlowVarSpec { target: y, parents: parents_y, architecture: arch.clone() },
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    /// Joint validation NLL (sum over flows).
    pub val_nll: f64,
    /// Per-flow validation NLLs, in spec order.
    pub val_per_flow: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RestartReport {
    pub restart: usize,
    pub lr_halvings: u32,
    /// Last epoch at which any flow improved its validation loss.
    pub best_epoch: usize,
    /// Sum of the per-flow best validation losses.
    pub best_val_nll: f64,
    /// Epoch of each flow's own best validation loss.
    pub best_epoch_per_flow: Vec<usize>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub chosen_restart: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub warnings: Vec<String>,
    pub restarts: Vec<RestartReport>,
}

/// Per-flow training arrays.
pub(crate) struct FlowData {
    parents_std: Vec<f64>, // n x P, row-major
    n_parents: usize,
    target_raw: Vec<f64>,
    /// Standardized targets; discrete entries are rewritten with fresh
    /// dequantization noise each epoch (training rows only).
    target_std: Vec<f64>,
    is_discrete: bool,
}

pub(crate) struct TrainData {
    flows: Vec<FlowData>,
    n: usize,
}

/// Gradients of a joint-NLL objective with respect to one flow's weight
/// groups.
#[derive(Debug, Clone)]
pub struct FlowGradients {
    pub embedding: MlpGrads,
    pub integrand: MlpGrads,
    pub offset_weights: Vec<f64>,
    pub offset_bias: f64,
}

impl FlowGradients {
    fn zeros_like(model: &FlowModel) -> Self {
        FlowGradients {
            embedding: MlpGrads::zeros_like(&model.embedding),
            integrand: MlpGrads::zeros_like(&model.integrand),
            offset_weights: vec![0.0; model.offset_weights.len()],
            offset_bias: 0.0,
        }
    }

    fn add_assign(&mut self, other: &FlowGradients) {
        self.embedding.add_assign(&other.embedding);
        self.integrand.add_assign(&other.integrand);
        for (a, b) in self.offset_weights.iter_mut().zip(&other.offset_weights) {
            *a += b;
        }
        self.offset_bias += other.offset_bias;
    }

    fn scale(&mut self, factor: f64) {
        self.embedding.scale(factor);
        self.integrand.scale(factor);
        for w in &mut self.offset_weights {
            *w *= factor;
        }
        self.offset_bias *= factor;
    }
}

/// Builds the base (zero-weight) models and the standardized training
/// arrays shared by every restart.
pub(crate) fn prepare(
    specs: &[FlowVarSpec],
    ds: &CausalDataset,
    cfg: &TrainConfig,
) -> Result<(Vec<FlowModel>, TrainData), FlowError> {
    if specs.is_empty() {
        return Err(FlowError::Config("no flows to train".into()));
    }
    let n = ds.n_rows();
    let mut models = Vec::with_capacity(specs.len());
    let mut flows = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut model = FlowModel::new(ds.schema(), &spec.target, &spec.parents, &spec.architecture)?;
        if let Some(q) = cfg.quadrature_nodes {
            model.quadrature = QuadratureRule::clenshaw_curtis(q);
        }
        let std_for = |name: &str| -> Result<Standardizer, FlowError> {
            let col = ds.column_by_name(name).expect("validated name");
            let sd = sample_sd(&col)
                .filter(|s| *s > 0.0)
                .ok_or_else(|| FlowError::Config(format!("variable '{name}' is constant")))?;
            Ok(Standardizer { mean: mean(&col), sd })
        };
        model.target_standardizer = std_for(&spec.target)?;
        model.parent_standardizers = spec
            .parents
            .iter()
            .map(|p| std_for(p))
            .collect::<Result<_, _>>()?;

        let p = spec.parents.len();
        let mut parents_std = Vec::with_capacity(n * p);
        for i in 0..n {
            let row = ds.row(i);
            for (idx, s) in model.parent_indices.iter().zip(&model.parent_standardizers) {
                parents_std.push(s.standardize(row[*idx]));
            }
        }
        let target_raw = ds.column_by_name(&spec.target).unwrap();
        let is_discrete = model.dequantizer.is_some();
        let target_std = target_raw
            .iter()
            .map(|&x| model.target_standardizer.standardize(x))
            .collect();
        flows.push(FlowData { parents_std, n_parents: p, target_raw, target_std, is_discrete });
        models.push(model);
    }
    Ok((models, TrainData { flows, n }))
}

/// Loss and (optionally) gradients over one chunk of observations.
///
/// Per observation and flow: with context c from the embedding and
/// standardized target l,
///   h = (l/2) sum_k w_k theta(t_k; c) + alpha(c),
///   nll = h^2/2 + ln(2 pi)/2 - ln theta(l; c) + ln sd_target.
fn chunk_loss_grads(
    models: &[FlowModel],
    data: &TrainData,
    rows: &[usize],
    want_grads: bool,
) -> (Vec<f64>, Option<Vec<FlowGradients>>) {
    let m = rows.len();
    let mut loss_sums = vec![0.0f64; models.len()];
    let mut grads = if want_grads {
        Some(models.iter().map(FlowGradients::zeros_like).collect::<Vec<_>>())
    } else {
        None
    };

    for (f, (model, fdata)) in models.iter().zip(&data.flows).enumerate() {
        let p = fdata.n_parents;
        let e_dim = model.embedding.out_dim();
        let n_nodes = model.quadrature.n_nodes();
        let rows_per_obs = n_nodes + 1;
        let width = 1 + e_dim;

        let mut parents = Vec::with_capacity(m * p);
        let mut targets = Vec::with_capacity(m);
        for &i in rows {
            parents.extend_from_slice(&fdata.parents_std[i * p..(i + 1) * p]);
            targets.push(fdata.target_std[i]);
        }

        let (c, emb_cache) = model.embedding.forward_cached(&parents, m);

        let mut int_input = vec![0.0; m * rows_per_obs * width];
        let mut nodes = vec![0.0; n_nodes];
        for (i, &l) in targets.iter().enumerate() {
            model.quadrature.map_nodes(l, &mut nodes);
            let c_row = &c[i * e_dim..(i + 1) * e_dim];
            let base = i * rows_per_obs * width;
            for (k, &t) in nodes.iter().chain(std::iter::once(&l)).enumerate() {
                let row = base + k * width;
                int_input[row] = t;
                int_input[row + 1..row + width].copy_from_slice(c_row);
            }
        }
        let (theta, int_cache) = model.integrand.forward_cached(&int_input, m * rows_per_obs);

        let mut h = vec![0.0; m];
        for (i, &l) in targets.iter().enumerate() {
            let node_thetas = &theta[i * rows_per_obs..i * rows_per_obs + n_nodes];
            let c_row = &c[i * e_dim..(i + 1) * e_dim];
            h[i] = model.quadrature.weighted_sum(l, node_thetas) + model.offset(c_row);
        }
        let ln_sd = model.target_standardizer.sd.ln();
        for (i, &hi) in h.iter().enumerate() {
            let theta_dens = theta[i * rows_per_obs + n_nodes];
            loss_sums[f] += 0.5 * hi * hi + 0.5 * LN_2PI - theta_dens.ln() + ln_sd;
        }

        if let Some(grads) = grads.as_mut() {
            let g = &mut grads[f];
            // d nll / d theta at each integrand row
            let mut grad_theta = vec![0.0; m * rows_per_obs];
            let weights = model.quadrature.weights();
            for (i, &l) in targets.iter().enumerate() {
                let scale = h[i] * 0.5 * l;
                for k in 0..n_nodes {
                    grad_theta[i * rows_per_obs + k] = scale * weights[k];
                }
                grad_theta[i * rows_per_obs + n_nodes] = -1.0 / theta[i * rows_per_obs + n_nodes];
            }
            let (grad_int_input, int_grads) = model.integrand.backward(&int_cache, &grad_theta);
            g.integrand.add_assign(&int_grads);

            // context gradient: from every integrand row plus the offset head
            let mut dc = vec![0.0; m * e_dim];
            for i in 0..m {
                let dci = &mut dc[i * e_dim..(i + 1) * e_dim];
                for k in 0..rows_per_obs {
                    let row = (i * rows_per_obs + k) * width;
                    for (slot, gi) in dci.iter_mut().zip(&grad_int_input[row + 1..row + width]) {
                        *slot += gi;
                    }
                }
                let c_row = &c[i * e_dim..(i + 1) * e_dim];
                for ((slot, w), (gw, cx)) in dci
                    .iter_mut()
                    .zip(&model.offset_weights)
                    .zip(g.offset_weights.iter_mut().zip(c_row))
                {
                    *slot += h[i] * w;
                    *gw += h[i] * cx;
                }
                g.offset_bias += h[i];
            }
            let (_, emb_grads) = model.embedding.backward(&emb_cache, &dc);
            g.embedding.add_assign(&emb_grads);
        }
    }
    (loss_sums, grads)
}

/// Batch loss and mean gradients, deterministic at any thread count.
pub(crate) fn batch_loss_grads(
    models: &[FlowModel],
    data: &TrainData,
    rows: &[usize],
) -> (f64, Vec<FlowGradients>) {
    let chunks: Vec<(Vec<f64>, Option<Vec<FlowGradients>>)> = rows
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| chunk_loss_grads(models, data, chunk, true))
        .collect();
    let mut loss = 0.0;
    let mut total: Vec<FlowGradients> = models.iter().map(FlowGradients::zeros_like).collect();
    for (l, g) in chunks {
        loss += l.iter().sum::<f64>();
        for (acc, part) in total.iter_mut().zip(g.expect("grads requested")) {
            acc.add_assign(&part);
        }
    }
    let inv = 1.0 / rows.len() as f64;
    for g in &mut total {
        g.scale(inv);
    }
    (loss, total)
}

/// Mean loss per flow over the rows, deterministic at any thread count.
pub(crate) fn eval_loss_per_flow(
    models: &[FlowModel],
    data: &TrainData,
    rows: &[usize],
) -> Vec<f64> {
    let parts: Vec<Vec<f64>> = rows
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| chunk_loss_grads(models, data, chunk, false).0)
        .collect();
    let mut total = vec![0.0f64; models.len()];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    for t in &mut total {
        *t /= rows.len() as f64;
    }
    total
}

#[cfg(test)]
pub(crate) fn eval_loss(models: &[FlowModel], data: &TrainData, rows: &[usize]) -> f64 {
    eval_loss_per_flow(models, data, rows).iter().sum()
}

struct Velocity {
    emb: MlpGrads,
    int: MlpGrads,
    off_w: Vec<f64>,
    off_b: f64,
}

impl Velocity {
    fn zeros_like(model: &FlowModel) -> Self {
        Velocity {
            emb: MlpGrads::zeros_like(&model.embedding),
            int: MlpGrads::zeros_like(&model.integrand),
            off_w: vec![0.0; model.offset_weights.len()],
            off_b: 0.0,
        }
    }
}

fn sgd_update(model: &mut FlowModel, grads: &FlowGradients, vel: &mut Velocity, lr: f64, momentum: f64) {
    update_mlp(&mut model.embedding, &grads.embedding, &mut vel.emb, lr, momentum);
    update_mlp(&mut model.integrand, &grads.integrand, &mut vel.int, lr, momentum);
    for ((p, g), v) in model
        .offset_weights
        .iter_mut()
        .zip(&grads.offset_weights)
        .zip(&mut vel.off_w)
    {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    vel.off_b = momentum * vel.off_b - lr * grads.offset_bias;
    model.offset_bias += vel.off_b;
}

fn update_mlp(mlp: &mut super::nn::Mlp, grads: &MlpGrads, vel: &mut MlpGrads, lr: f64, momentum: f64) {
    for (idx, layer) in mlp.layers.iter_mut().enumerate() {
        for ((p, g), v) in layer
            .weights
            .iter_mut()
            .zip(&grads.weights[idx])
            .zip(&mut vel.weights[idx])
        {
            *v = momentum * *v - lr * g;
            *p += *v;
        }
        for ((p, g), v) in layer
            .biases
            .iter_mut()
            .zip(&grads.biases[idx])
            .zip(&mut vel.biases[idx])
        {
            *v = momentum * *v - lr * g;
            *p += *v;
        }
    }
}

/// Trains all flows jointly and returns the lowest-validation-loss models
/// across random restarts, plus the per-epoch training report.
pub fn train_flows(
    specs: &[FlowVarSpec],
    ds: &CausalDataset,
    cfg: &TrainConfig,
) -> Result<(Vec<FlowModel>, TrainReport), FlowError> {
    if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
        return Err(FlowError::Config("validation fraction must be in (0, 1)".into()));
    }
    if cfg.restarts < 1 || cfg.batch_size < 1 || cfg.max_epochs < 1 {
        return Err(FlowError::Config("restarts, batch size, max epochs must be >= 1".into()));
    }
    let (base_models, mut data) = prepare(specs, ds, cfg)?;
    let n = data.n;

    // 80/20-style split on a seeded shuffle
    let key = RngKey::new(cfg.seed);
    let mut perm: Vec<usize> = (0..n).collect();
    key.tagged(Tag::FlowSplit).stream().shuffle(&mut perm);
    let n_val = ((cfg.validation_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let val_rows: Vec<usize> = perm[..n_val].to_vec();
    let train_rows: Vec<usize> = perm[n_val..].to_vec();

    let mut warnings = Vec::new();
    if train_rows.len() < cfg.min_train_warning {
        warnings.push(format!(
            "training split has {} rows; flow estimates are unreliable below ~{}",
            train_rows.len(),
            cfg.min_train_warning
        ));
    }

    // fixed dequantization noise for validation rows
    let val_noise_key = key.tagged(Tag::FlowDequant).child(u64::MAX);
    for (f, fdata) in data.flows.iter_mut().enumerate() {
        if !fdata.is_discrete {
            continue;
        }
        let deq = base_models[f].dequantizer.expect("discrete target");
        let std = base_models[f].target_standardizer;
        for &i in &val_rows {
            let mut s = val_noise_key.stream_at(f as u64, i as u64, 0);
            fdata.target_std[i] = std.standardize(deq.dequantize(fdata.target_raw[i], &mut s));
        }
    }

    let mut reports: Vec<RestartReport> = Vec::with_capacity(cfg.restarts);
    let mut overall_best: Option<(f64, usize, Vec<FlowModel>)> = None;

    for restart in 0..cfg.restarts {
        let init_key = key.tagged(Tag::FlowInit).child(restart as u64);
        let mut lr_halvings = 0u32;
        let report = 'attempt: loop {
            let mut models = base_models.clone();
            for (f, model) in models.iter_mut().enumerate() {
                model.init_weights(&mut init_key.stream_at(f as u64, 0, 0));
            }
            let mut velocities: Vec<Velocity> = models.iter().map(Velocity::zeros_like).collect();
            let lr0 = cfg.learning_rate / f64::powi(2.0, lr_halvings as i32);

            let mut epochs: Vec<EpochRecord> = Vec::new();
            // each flow keeps its own best-validation weights; training
            // stops when no flow has improved for `patience` evaluations
            let mut best_val: Vec<f64> = vec![f64::INFINITY; models.len()];
            let mut best_epoch_per_flow: Vec<usize> = vec![0; models.len()];
            let mut best_models: Vec<FlowModel> = models.clone();
            let mut last_improvement = 0usize;
            let mut any_epoch_done = false;
            let mut patience_left = cfg.patience;
            let mut diverged = false;

            'epochs: for epoch in 0..cfg.max_epochs {
                let lr_e = 0.5
                    * lr0
                    * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.max_epochs as f64).cos());

                // fresh dequantization noise on the training rows
                let deq_key = key.tagged(Tag::FlowDequant).child(restart as u64);
                for (f, fdata) in data.flows.iter_mut().enumerate() {
                    if !fdata.is_discrete {
                        continue;
                    }
                    let deq = models[f].dequantizer.expect("discrete target");
                    let std = models[f].target_standardizer;
                    for &i in &train_rows {
                        let mut s = deq_key.stream_at(epoch as u64, f as u64, i as u64);
                        fdata.target_std[i] =
                            std.standardize(deq.dequantize(fdata.target_raw[i], &mut s));
                    }
                }

                let mut order = train_rows.clone();
                key.tagged(Tag::FlowShuffle)
                    .child(restart as u64)
                    .stream_at(epoch as u64, 0, 0)
                    .shuffle(&mut order);

                let mut train_loss_sum = 0.0;
                for batch in order.chunks(cfg.batch_size) {
                    let (loss_sum, grads) = batch_loss_grads(&models, &data, batch);
                    if !loss_sum.is_finite() {
                        diverged = true;
                        break 'epochs;
                    }
                    train_loss_sum += loss_sum;
                    for ((model, g), vel) in
                        models.iter_mut().zip(&grads).zip(velocities.iter_mut())
                    {
                        sgd_update(model, g, vel, lr_e, cfg.momentum);
                    }
                }

                let val_per_flow = eval_loss_per_flow(&models, &data, &val_rows);
                let val_nll: f64 = val_per_flow.iter().sum();
                if !val_nll.is_finite() {
                    diverged = true;
                    break 'epochs;
                }
                let mut any_improved = false;
                for (f, &val) in val_per_flow.iter().enumerate() {
                    if val < best_val[f] {
                        best_val[f] = val;
                        best_epoch_per_flow[f] = epoch;
                        best_models[f] = models[f].clone();
                        any_improved = true;
                    }
                }
                epochs.push(EpochRecord {
                    epoch,
                    train_nll: train_loss_sum / train_rows.len() as f64,
                    val_nll,
                    val_per_flow,
                });
                any_epoch_done = true;
                if any_improved {
                    last_improvement = epoch;
                    patience_left = cfg.patience;
                } else {
                    patience_left -= 1;
                    if patience_left == 0 {
                        break 'epochs;
                    }
                }
            }

            if diverged || !any_epoch_done {
                lr_halvings += 1;
                if lr_halvings > 2 {
                    return Err(FlowError::Diverged(format!(
                        "restart {restart} produced non-finite losses at every tried learning rate"
                    )));
                }
                continue 'attempt;
            }

            let total_best: f64 = best_val.iter().sum();
            let better = overall_best
                .as_ref()
                .map_or(true, |(b, _, _)| total_best < *b);
            if better {
                overall_best = Some((total_best, restart, best_models));
            }
            break 'attempt RestartReport {
                restart,
                lr_halvings,
                best_epoch: last_improvement,
                best_val_nll: total_best,
                best_epoch_per_flow,
                epochs,
            };
        };
        reports.push(report);
    }

    let (_, chosen_restart, models) = overall_best.expect("at least one restart");
    Ok((
        models,
        TrainReport {
            chosen_restart,
            n_train: train_rows.len(),
            n_val: val_rows.len(),
            warnings,
            restarts: reports,
        },
    ))
}

fn data_from_rows(models: &[FlowModel], rows: &[Vec<f64>]) -> TrainData {
    let n = rows.len();
    let flows = models
        .iter()
        .map(|model| {
            let p = model.parent_indices.len();
            let mut parents_std = Vec::with_capacity(n * p);
            let mut target_raw = Vec::with_capacity(n);
            let mut target_std = Vec::with_capacity(n);
            for row in rows {
                parents_std.extend(model.standardize_parents(row));
                let raw = row[model.target_index];
                target_raw.push(raw);
                target_std.push(model.target_standardizer.standardize(raw));
            }
            FlowData { parents_std, n_parents: p, target_raw, target_std, is_discrete: false }
        })
        .collect();
    TrainData { flows, n }
}

/// Mean joint NLL of raw records together with its exact reverse-mode
/// gradients per flow (mean over rows, same convention as the loss).
pub fn joint_nll_with_gradients(
    models: &[FlowModel],
    rows: &[Vec<f64>],
) -> Result<(f64, Vec<FlowGradients>), FlowError> {
    if rows.is_empty() {
        return Err(FlowError::Config("empty batch".into()));
    }
    let data = data_from_rows(models, rows);
    let all: Vec<usize> = (0..rows.len()).collect();
    let (loss_sum, grads) = batch_loss_grads(models, &data, &all);
    let mean_nll = loss_sum / rows.len() as f64;
    if !mean_nll.is_finite() {
        return Err(FlowError::NonFiniteLoss { batch: 0 });
    }
    Ok((mean_nll, grads))
}

/// Mean joint NLL of raw records (one per row, schema order); discrete
/// targets must already be dequantized. The per-variable terms are log
/// densities in raw data units.
pub fn joint_nll(models: &[FlowModel], rows: &[Vec<f64>]) -> Result<f64, FlowError> {
    if rows.is_empty() {
        return Err(FlowError::Config("empty batch".into()));
    }
    let mut total = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let mut nll = 0.0;
        for model in models {
            let parents_std = model.standardize_parents(row);
            let c = model.embed(&parents_std);
            let l_std = model.target_standardizer.standardize(row[model.target_index]);
            nll -= model.log_density_raw_from_std(&c, l_std);
        }
        if !nll.is_finite() {
            return Err(FlowError::NonFiniteLoss { batch: i });
        }
        total += nll;
    }
    Ok(total / rows.len() as f64)
}

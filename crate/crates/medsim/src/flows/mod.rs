//! Conditional normalizing flows built on unconstrained monotonic neural
//! networks.
//!
//! Each flow models one variable given its causal parents. An embedding
//! network maps the (standardized) parents to a context vector `c`; a
//! strictly positive integrand network `theta(t; c)` is integrated from 0 to
//! the (standardized) target value by Clenshaw-Curtis quadrature; adding an
//! affine offset `alpha(c)` yields the forward map
//!
//! ```text
//! z = h(l | c) = integral_0^l theta(t; c) dt + alpha(c),
//! ```
//!
//! which is strictly increasing in `l` because the integrand is positive.
//! Training drives `z` toward a standard normal, so densities come from the
//! change-of-variables formula (the derivative dh/dl is just `theta(l; c)` by
//! the fundamental theorem of calculus, no numerical differentiation), and
//! sampling inverts the map on standard normal draws with bisection.
//!
//! Discrete targets are dequantized with small normal noise before flowing
//! and requantized by rounding after sampling.

pub mod nn;
pub mod quadrature;
mod train;

use serde::{Deserialize, Serialize};

pub use nn::{elu_plus, Activation, Mlp};
pub use quadrature::QuadratureRule;
pub use nn::MlpGrads;
pub use train::{
    joint_nll, joint_nll_with_gradients, specs_for_mode, train_flows, EpochRecord, FlowGradients,
    FlowVarSpec, RestartReport, TrainConfig, TrainReport,
};

use crate::data::{CausalSchema, VariableKind};
use crate::error::FlowError;
use crate::numeric::normal_log_pdf;
use crate::rng::Stream;

/// Absolute tolerance for bisection inversion, in z units.
const INVERT_TOL: f64 = 1e-6;
const BRACKET_DOUBLINGS: u32 = 60;

/// Network shapes and quadrature resolution.
///
/// The defaults give both networks five hidden layers (at least four hidden
/// layers with 10+ nodes each is the recommended minimum for the nets to act
/// as flexible density approximators).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowArchitecture {
    pub embedding_hidden: Vec<usize>,
    pub embedding_out: usize,
    pub integrand_hidden: Vec<usize>,
    pub quadrature_nodes: usize,
}

impl Default for FlowArchitecture {
    fn default() -> Self {
        FlowArchitecture {
            embedding_hidden: vec![100, 90, 80, 70, 60],
            embedding_out: 20,
            integrand_hidden: vec![60, 50, 40, 30, 20],
            quadrature_nodes: 32,
        }
    }
}

impl FlowArchitecture {
    /// A small architecture for quick tests.
    pub fn compact() -> Self {
        FlowArchitecture {
            embedding_hidden: vec![16, 12],
            embedding_out: 8,
            integrand_hidden: vec![16, 12],
            quadrature_nodes: 32,
        }
    }
}

/// Affine standardization x -> (x - mean) / sd.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub sd: f64,
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer { mean: 0.0, sd: 1.0 }
    }

    #[inline]
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }

    #[inline]
    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Normal dequantization noise on the integer grid.
///
/// With the default scale 0.1 the mass beyond half-integer boundaries is
/// about 5.7e-7, so rounding recovers the original integer essentially
/// surely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dequantizer {
    pub noise_sd: f64,
}

impl Default for Dequantizer {
    fn default() -> Self {
        Dequantizer { noise_sd: 0.1 }
    }
}

impl Dequantizer {
    #[inline]
    pub fn dequantize(&self, k: f64, stream: &mut Stream) -> f64 {
        k + self.noise_sd * stream.normal()
    }
}

/// One conditional normalizing flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub target: String,
    pub target_index: usize,
    pub target_kind: VariableKind,
    pub parents: Vec<String>,
    pub parent_indices: Vec<usize>,
    pub embedding: Mlp,
    pub integrand: Mlp,
    pub offset_weights: Vec<f64>,
    pub offset_bias: f64,
    pub target_standardizer: Standardizer,
    pub parent_standardizers: Vec<Standardizer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dequantizer: Option<Dequantizer>,
    #[serde(
        serialize_with = "quadrature::serialize_rule",
        deserialize_with = "quadrature::deserialize_rule"
    )]
    pub quadrature: QuadratureRule,
}

impl FlowModel {
    /// Builds an untrained flow (all weights zero, identity standardizers).
    pub fn new(
        schema: &CausalSchema,
        target: &str,
        parents: &[String],
        arch: &FlowArchitecture,
    ) -> Result<Self, FlowError> {
        let target_index = schema
            .index_of(target)
            .ok_or_else(|| FlowError::Config(format!("unknown target '{target}'")))?;
        let target_kind = schema.kind_of(target).unwrap();
        if parents.is_empty() {
            return Err(FlowError::Config(format!(
                "flow for '{target}' needs at least one conditioning variable"
            )));
        }
        let mut parent_indices = Vec::with_capacity(parents.len());
        for p in parents {
            if p == target {
                return Err(FlowError::Config(format!(
                    "'{target}' cannot condition on itself"
                )));
            }
            let idx = schema
                .index_of(p)
                .ok_or_else(|| FlowError::Config(format!("unknown parent '{p}'")))?;
            if parent_indices.contains(&idx) {
                return Err(FlowError::Config(format!("duplicate parent '{p}'")));
            }
            parent_indices.push(idx);
        }
        let embedding = Mlp::new(
            parents.len(),
            &arch.embedding_hidden,
            arch.embedding_out,
            Activation::Relu,
            Activation::Relu,
        );
        let integrand = Mlp::new(
            1 + arch.embedding_out,
            &arch.integrand_hidden,
            1,
            Activation::EluPlus,
            Activation::EluPlus,
        );
        Ok(FlowModel {
            target: target.to_string(),
            target_index,
            target_kind,
            parents: parents.to_vec(),
            parent_indices,
            embedding,
            integrand,
            offset_weights: vec![0.0; arch.embedding_out],
            offset_bias: 0.0,
            target_standardizer: Standardizer::identity(),
            parent_standardizers: vec![Standardizer::identity(); parents.len()],
            dequantizer: if target_kind.is_discrete() {
                Some(Dequantizer::default())
            } else {
                None
            },
            quadrature: QuadratureRule::clenshaw_curtis(arch.quadrature_nodes),
        })
    }

    pub fn init_weights(&mut self, stream: &mut Stream) {
        self.embedding.init(stream);
        self.integrand.init(stream);
        let scale = 1.0 / (self.offset_weights.len() as f64).sqrt();
        for w in &mut self.offset_weights {
            *w = (2.0 * stream.uniform() - 1.0) * scale;
        }
        self.offset_bias = 0.0;
    }

    pub fn parameter_count(&self) -> usize {
        self.embedding.parameter_count()
            + self.integrand.parameter_count()
            + self.offset_weights.len()
            + 1
    }

    /// Standardized parent vector extracted from a raw record in schema
    /// order.
    pub fn standardize_parents(&self, values: &[f64]) -> Vec<f64> {
        self.parent_indices
            .iter()
            .zip(&self.parent_standardizers)
            .map(|(&idx, s)| s.standardize(values[idx]))
            .collect()
    }

    /// Embedding context for standardized parents.
    pub fn embed(&self, parents_std: &[f64]) -> Vec<f64> {
        self.embedding.forward(parents_std, 1)
    }

    #[inline]
    pub fn offset(&self, c: &[f64]) -> f64 {
        let mut acc = self.offset_bias;
        for (w, x) in self.offset_weights.iter().zip(c) {
            acc += w * x;
        }
        acc
    }

    /// Integrand value theta(t; c) > 0.
    pub fn integrand_at(&self, c: &[f64], t: f64) -> f64 {
        let mut input = Vec::with_capacity(1 + c.len());
        input.push(t);
        input.extend_from_slice(c);
        self.integrand.forward(&input, 1)[0]
    }

    /// Forward map in standardized space: h(l) = int_0^l theta + alpha(c).
    pub fn forward_std(&self, c: &[f64], l_std: f64) -> f64 {
        let n = self.quadrature.n_nodes();
        let width = 1 + c.len();
        let mut nodes = vec![0.0; n];
        self.quadrature.map_nodes(l_std, &mut nodes);
        let mut input = Vec::with_capacity(n * width);
        for t in &nodes {
            input.push(*t);
            input.extend_from_slice(c);
        }
        let thetas = self.integrand.forward(&input, n);
        self.quadrature.weighted_sum(l_std, &thetas) + self.offset(c)
    }

    /// Log density of the standardized target value through the
    /// change-of-variables formula; the Jacobian term is the integrand at l.
    pub fn log_density_std(&self, c: &[f64], l_std: f64) -> f64 {
        let z = self.forward_std(c, l_std);
        normal_log_pdf(z) + self.integrand_at(c, l_std).ln()
    }

    /// Log density in raw data units (adds the standardization Jacobian).
    pub fn log_density_raw_from_std(&self, c: &[f64], l_std: f64) -> f64 {
        self.log_density_std(c, l_std) - self.target_standardizer.sd.ln()
    }

    /// Inverts the forward map by bisection: finds l with |h(l) - z| within
    /// 1e-6. The bracket grows geometrically from [-1, 1]; monotonicity
    /// guarantees success for finite z unless the model is pathological.
    pub fn invert_std(&self, c: &[f64], z: f64) -> Result<f64, FlowError> {
        let mut lo = -1.0f64;
        let mut hi = 1.0f64;
        let mut h_lo = self.forward_std(c, lo);
        let mut h_hi = self.forward_std(c, hi);
        let mut doublings = 0;
        while h_lo > z {
            lo *= 2.0;
            doublings += 1;
            if doublings > BRACKET_DOUBLINGS {
                return Err(FlowError::BracketNotFound { doublings, z });
            }
            h_lo = self.forward_std(c, lo);
        }
        while h_hi < z {
            hi *= 2.0;
            doublings += 1;
            if doublings > BRACKET_DOUBLINGS {
                return Err(FlowError::BracketNotFound { doublings, z });
            }
            h_hi = self.forward_std(c, hi);
        }
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            let h_mid = self.forward_std(c, mid);
            if (h_mid - z).abs() <= INVERT_TOL {
                return Ok(mid);
            }
            if h_mid < z {
                lo = mid;
            } else {
                hi = mid;
            }
            mid = 0.5 * (lo + hi);
        }
        Ok(mid)
    }

    /// Rounds a raw sampled value back onto the declared support.
    pub fn requantize(&self, raw: f64) -> f64 {
        match self.target_kind {
            VariableKind::Continuous => raw,
            VariableKind::Binary => raw.round().clamp(0.0, 1.0),
            VariableKind::Ordinal { levels } => raw.round().clamp(0.0, (levels - 1) as f64),
            VariableKind::Count => raw.round().max(0.0),
        }
    }

    /// Draws one value given a raw record: z ~ N(0,1), invert, destandardize,
    /// requantize discrete targets.
    pub fn sample_from_record(&self, values: &[f64], stream: &mut Stream) -> Result<f64, FlowError> {
        let parents_std = self.standardize_parents(values);
        let c = self.embed(&parents_std);
        let z = stream.normal();
        let l_std = self.invert_std(&c, z)?;
        let raw = self.target_standardizer.destandardize(l_std);
        Ok(self.requantize(raw))
    }

    /// For bounded discrete targets: the z-space images of the requantization
    /// bin boundaries (k + 1/2 for k = 0 .. K-2). A standard normal draw z
    /// then maps to level `#{boundaries below z}` without any inversion.
    pub fn discrete_bin_thresholds(&self, c: &[f64]) -> Option<Vec<f64>> {
        let levels = self.target_kind.level_count()?;
        Some(
            (0..levels - 1)
                .map(|k| {
                    let boundary = k as f64 + 0.5;
                    self.forward_std(c, self.target_standardizer.standardize(boundary))
                })
                .collect(),
        )
    }
}

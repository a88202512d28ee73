//! Dense feed-forward networks with batched reverse-mode gradients.
//!
//! The flows only need fully connected layers with three activations, so the
//! backward pass is specialized rather than taped: each layer caches its
//! input and pre-activations during the forward pass and replays them in
//! reverse, producing exact gradients of the discretized objective.

use serde::{Deserialize, Serialize};

use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    /// Exponential linear unit incremented by one: strictly positive,
    /// continuously differentiable, monotone.
    EluPlus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::EluPlus => elu_plus(x),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::EluPlus => {
                if pre > 0.0 {
                    1.0
                } else {
                    pre.exp()
                }
            }
        }
    }
}

/// ELU(x) + 1: x + 1 for x > 0, exp(x) otherwise.
#[inline]
pub fn elu_plus(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// Fully connected layer; weights stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            biases: vec![0.0; out_dim],
        }
    }

    /// Symmetric uniform init scaled by fan-in (variance 2/fan_in, which
    /// preserves activation scale through rectifier stacks); biases zero.
    pub fn init(&mut self, stream: &mut Stream) {
        let scale = (6.0 / self.in_dim as f64).sqrt();
        for w in &mut self.weights {
            *w = (2.0 * stream.uniform() - 1.0) * scale;
        }
        for b in &mut self.biases {
            *b = 0.0;
        }
    }

    /// out[m x out_dim] = in[m x in_dim] * W' + b
    fn forward(&self, input: &[f64], m: usize, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(m * self.out_dim);
        for r in 0..m {
            let row = &input[r * self.in_dim..(r + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.biases[o];
                for (wi, xi) in w.iter().zip(row) {
                    acc += wi * xi;
                }
                out.push(acc);
            }
        }
    }
}

/// Multilayer perceptron: hidden layers share one activation, the output
/// layer has its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Per-layer gradients matching an [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            weights: mlp.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: mlp.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in a.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Forward-pass cache: layer inputs and pre-activations, consumed by
/// [`Mlp::backward`].
#[derive(Debug, Default)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    m: usize,
}

impl Mlp {
    pub fn new(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Self {
        assert!(in_dim > 0, "network input dimension must be positive");
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &width in hidden {
            assert!(width > 0);
            layers.push(Linear::zeros(prev, width));
            prev = width;
        }
        layers.push(Linear::zeros(prev, out_dim));
        Mlp { layers, hidden_activation, output_activation }
    }

    pub fn init(&mut self, stream: &mut Stream) {
        for layer in &mut self.layers {
            layer.init(stream);
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn activation_of(&self, layer_index: usize) -> Activation {
        if layer_index + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Batched forward pass over `m` rows; returns activations of the output
    /// layer (`m * out_dim`).
    pub fn forward(&self, input: &[f64], m: usize) -> Vec<f64> {
        let (out, _) = self.forward_cached_impl(input, m, false);
        out
    }

    /// Forward pass retaining the cache needed for [`Mlp::backward`].
    pub fn forward_cached(&self, input: &[f64], m: usize) -> (Vec<f64>, MlpCache) {
        self.forward_cached_impl(input, m, true)
    }

    fn forward_cached_impl(&self, input: &[f64], m: usize, keep: bool) -> (Vec<f64>, MlpCache) {
        debug_assert_eq!(input.len(), m * self.in_dim());
        let mut cache = MlpCache { m, ..MlpCache::default() };
        let mut current = input.to_vec();
        let mut pre = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.forward(&current, m, &mut pre);
            let act = self.activation_of(idx);
            let mut next = pre.clone();
            for x in &mut next {
                *x = act.apply(*x);
            }
            if keep {
                cache.inputs.push(std::mem::take(&mut current));
                cache.pre_activations.push(std::mem::replace(&mut pre, Vec::new()));
            }
            current = next;
        }
        (current, cache)
    }

    /// Backward pass: gradients of a scalar objective with respect to all
    /// weights and the network input, given d(objective)/d(output) per row.
    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64]) -> (Vec<f64>, MlpGrads) {
        let m = cache.m;
        debug_assert_eq!(grad_output.len(), m * self.out_dim());
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = grad_output.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let act = self.activation_of(idx);
            let pre = &cache.pre_activations[idx];
            let input = &cache.inputs[idx];
            // delta through the activation
            for (d, p) in delta.iter_mut().zip(pre) {
                *d *= act.derivative(*p);
            }
            // parameter gradients
            let gw = &mut grads.weights[idx];
            let gb = &mut grads.biases[idx];
            for r in 0..m {
                let drow = &delta[r * layer.out_dim..(r + 1) * layer.out_dim];
                let xrow = &input[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (o, d) in drow.iter().enumerate() {
                    gb[o] += d;
                    let gw_row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, x) in gw_row.iter_mut().zip(xrow) {
                        *g += d * x;
                    }
                }
            }
            // delta to the previous layer
            let mut prev_delta = vec![0.0; m * layer.in_dim];
            for r in 0..m {
                let drow = &delta[r * layer.out_dim..(r + 1) * layer.out_dim];
                let prow = &mut prev_delta[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (o, d) in drow.iter().enumerate() {
                    let w_row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, w) in prow.iter_mut().zip(w_row) {
                        *p += d * w;
                    }
                }
            }
            delta = prev_delta;
        }
        (delta, grads)
    }

    /// Flat view of all parameters, for gradient checking.
    pub fn parameters_mut(&mut self) -> Vec<&mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
            .collect()
    }

    pub fn grads_flat(grads: &MlpGrads) -> Vec<f64> {
        grads
            .weights
            .iter()
            .zip(&grads.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

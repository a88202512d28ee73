//! Clenshaw-Curtis quadrature on a reference interval, affinely mapped to
//! the oriented interval [0, l].

use serde::{Deserialize, Serialize};

/// Nodes and weights on [-1, 1]; N nodes integrate polynomials of degree
/// < N exactly. The map t = (x + 1) l / 2 carries the rule to [0, l]; a
/// negative l yields the oriented integral with its sign flipped.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Classic Clenshaw-Curtis rule with `n_nodes >= 2` points, endpoints
    /// included: x_k = cos(pi k / n) and the cosine-sum weights.
    pub fn clenshaw_curtis(n_nodes: usize) -> Self {
        assert!(n_nodes >= 2, "need at least two quadrature nodes");
        let n = n_nodes - 1;
        let nodes: Vec<f64> = (0..=n)
            .map(|k| (std::f64::consts::PI * k as f64 / n as f64).cos())
            .collect();
        let mut weights = Vec::with_capacity(n_nodes);
        for k in 0..=n {
            let c_k = if k == 0 || k == n { 1.0 } else { 2.0 };
            let mut sum = 0.0;
            for j in 1..=(n / 2) {
                let b_j = if 2 * j == n { 1.0 } else { 2.0 };
                sum += b_j / ((4 * j * j - 1) as f64)
                    * (2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64).cos();
            }
            weights.push(c_k / n as f64 * (1.0 - sum));
        }
        QuadratureRule { nodes, weights }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes mapped to [0, l], written into `out`.
    #[inline]
    pub fn map_nodes(&self, l: f64, out: &mut [f64]) {
        let half = 0.5 * l;
        for (slot, x) in out.iter_mut().zip(&self.nodes) {
            *slot = (x + 1.0) * half;
        }
    }

    /// Oriented integral of f over [0, l].
    pub fn integrate(&self, l: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * l;
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f((x + 1.0) * half);
        }
        acc * half
    }

    /// Weighted sum of already-evaluated integrand values at the mapped
    /// nodes, scaled by l/2.
    #[inline]
    pub fn weighted_sum(&self, l: f64, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (w, v) in self.weights.iter().zip(values) {
            acc += w * v;
        }
        acc * 0.5 * l
    }
}

pub fn serialize_rule<S: serde::Serializer>(
    rule: &QuadratureRule,
    ser: S,
) -> Result<S::Ok, S::Error> {
    rule.n_nodes().serialize(ser)
}

pub fn deserialize_rule<'de, D: serde::Deserializer<'de>>(
    de: D,
) -> Result<QuadratureRule, D::Error> {
    let n = usize::deserialize(de)?;
    Ok(QuadratureRule::clenshaw_curtis(n))
}

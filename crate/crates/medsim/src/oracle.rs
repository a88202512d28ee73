//! Ground truth for the test suites.
//!
//! [`DiscreteDgp`] stores explicit conditional probability tables over small
//! finite supports, so the marginal potential-outcome means that define the
//! effects can be evaluated by direct summation over the full state space —
//! no estimation, no Monte Carlo. [`LinearGaussianDgp`] provides the
//! closed-form coefficient-product effects of a linear structural model.
//! Both can generate synthetic datasets by ancestral sampling in causal
//! order V -> D -> L -> X -> Y.

use serde::{Deserialize, Serialize};

use crate::data::{CausalDataset, CausalSchema, Treatment, Variable, VariableKind};
use crate::error::DataError;
use crate::rng::{RngKey, Stream, Tag};
use crate::sim::{LambdaAssignment, PsiAssignment};

const TABLE_TOL: f64 = 1e-12;

/// Fully discrete data-generating process with explicit probability tables.
///
/// Tables are indexed by level positions, e.g. `p_x_given_vdl[v][d][l][x]`.
/// Values stored in datasets are the entries of the `*_levels` vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteDgp {
    pub v_levels: Vec<f64>,
    pub d_levels: Vec<f64>,
    pub l_levels: Vec<f64>,
    pub x_levels: Vec<f64>,
    pub y_levels: Vec<f64>,
    pub p_v: Vec<f64>,
    pub p_d_given_v: Vec<Vec<f64>>,
    pub p_l_given_vd: Vec<Vec<Vec<f64>>>,
    pub p_x_given_vdl: Vec<Vec<Vec<Vec<f64>>>>,
    pub p_y_given_vdlx: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
}

fn check_simplex(row: &[f64], what: &str) -> Result<(), DataError> {
    if row.iter().any(|&p| p < 0.0) {
        return Err(DataError::Validation(format!("{what}: negative probability")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > TABLE_TOL {
        return Err(DataError::Validation(format!("{what}: row sums to {s}, not 1")));
    }
    Ok(())
}

impl DiscreteDgp {
    pub fn validate(&self) -> Result<(), DataError> {
        check_simplex(&self.p_v, "p_v")?;
        for (v, row) in self.p_d_given_v.iter().enumerate() {
            check_simplex(row, &format!("p_d_given_v[{v}]"))?;
        }
        for (v, per_d) in self.p_l_given_vd.iter().enumerate() {
            for (d, row) in per_d.iter().enumerate() {
                check_simplex(row, &format!("p_l_given_vd[{v}][{d}]"))?;
            }
        }
        for (v, per_d) in self.p_x_given_vdl.iter().enumerate() {
            for (d, per_l) in per_d.iter().enumerate() {
                for (l, row) in per_l.iter().enumerate() {
                    check_simplex(row, &format!("p_x_given_vdl[{v}][{d}][{l}]"))?;
                }
            }
        }
        for (v, per_d) in self.p_y_given_vdlx.iter().enumerate() {
            for (d, per_l) in per_d.iter().enumerate() {
                for (l, per_x) in per_l.iter().enumerate() {
                    for (x, row) in per_x.iter().enumerate() {
                        check_simplex(row, &format!("p_y_given_vdlx[{v}][{d}][{l}][{x}]"))?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(reader: impl std::io::Read) -> Result<Self, DataError> {
        let dgp: DiscreteDgp =
            serde_json::from_reader(reader).map_err(|e| DataError::Parse(e.to_string()))?;
        dgp.validate()?;
        Ok(dgp)
    }

    fn level_index(levels: &[f64], value: f64, what: &str) -> usize {
        levels
            .iter()
            .position(|&x| x == value)
            .unwrap_or_else(|| panic!("{what} value {value} is not a level of the process"))
    }

    /// E[Y | v, d, l, x] derived from the outcome table.
    fn expected_y(&self, v: usize, d: usize, l: usize, x: usize) -> f64 {
        self.p_y_given_vdlx[v][d][l][x]
            .iter()
            .zip(&self.y_levels)
            .map(|(p, y)| p * y)
            .sum()
    }

    /// psi(d1, d2, d3) by direct summation over the full (v, l, x) space.
    pub fn eval_psi_exact(&self, a: PsiAssignment) -> f64 {
        let d1 = Self::level_index(&self.d_levels, a.d1, "d1");
        let d2 = Self::level_index(&self.d_levels, a.d2, "d2");
        let d3 = Self::level_index(&self.d_levels, a.d3, "d3");
        let mut total = 0.0;
        for v in 0..self.v_levels.len() {
            for l in 0..self.l_levels.len() {
                let w_l = self.p_l_given_vd[v][d1][l] * self.p_v[v];
                for x in 0..self.x_levels.len() {
                    total += self.expected_y(v, d3, l, x) * self.p_x_given_vdl[v][d2][l][x] * w_l;
                }
            }
        }
        total
    }

    /// phi(d1, d2) = psi(d1, d1, d2): the joint mediator distribution under
    /// d1 factorizes as P(x|v,d1,l) P(l|v,d1).
    pub fn eval_phi_exact(&self, d1: f64, d2: f64) -> f64 {
        self.eval_psi_exact(PsiAssignment { d1, d2: d1, d3: d2 })
    }

    /// lambda(d1, d2): the focal mediator is drawn from its marginal
    /// P(x|v,d1) = sum_l P(x|v,d1,l) P(l|v,d1).
    pub fn eval_lambda_exact(&self, a: LambdaAssignment) -> f64 {
        let d1 = Self::level_index(&self.d_levels, a.d1, "d1");
        let d2 = Self::level_index(&self.d_levels, a.d2, "d2");
        let mut total = 0.0;
        for v in 0..self.v_levels.len() {
            for x in 0..self.x_levels.len() {
                let p_x_marginal: f64 = (0..self.l_levels.len())
                    .map(|l| self.p_x_given_vdl[v][d1][l][x] * self.p_l_given_vd[v][d1][l])
                    .sum();
                for l in 0..self.l_levels.len() {
                    total += self.expected_y(v, d2, l, x)
                        * self.p_l_given_vd[v][d2][l]
                        * p_x_marginal
                        * self.p_v[v];
                }
            }
        }
        total
    }

    /// All nine effects for the contrast (d, d*), evaluated exactly.
    pub fn exact_effects(&self, d: f64, d_star: f64) -> ExactEffects {
        let psi = |d1, d2, d3| self.eval_psi_exact(PsiAssignment { d1, d2, d3 });
        let lam = |d1, d2| self.eval_lambda_exact(LambdaAssignment { d1, d2 });
        let pse_dy = psi(d_star, d_star, d) - psi(d_star, d_star, d_star);
        let pse_dxy = psi(d_star, d, d) - psi(d_star, d_star, d);
        let pse_dly = psi(d, d, d) - psi(d_star, d, d);
        let ide = lam(d_star, d) - lam(d_star, d_star);
        let iie = lam(d, d) - lam(d_star, d);
        ExactEffects {
            pse_dy,
            pse_dxy,
            pse_dly,
            ate: pse_dy + pse_dxy + pse_dly,
            mnde: pse_dy,
            mnie: pse_dxy + pse_dly,
            ide,
            iie,
            oe: ide + iie,
        }
    }

    fn kind_for(levels: &[f64]) -> VariableKind {
        let k = levels.len();
        let coded: bool = levels
            .iter()
            .enumerate()
            .all(|(i, &x)| x == i as f64);
        if coded && k == 2 {
            VariableKind::Binary
        } else if coded {
            VariableKind::Ordinal { levels: k as u32 }
        } else {
            VariableKind::Continuous
        }
    }

    /// Schema with variables named v, d, l, x, y and contrast
    /// (d, d*) = (last treatment level, first treatment level).
    pub fn schema(&self) -> CausalSchema {
        CausalSchema::new(
            vec![Variable::new("v", Self::kind_for(&self.v_levels))],
            Treatment {
                name: "d".into(),
                kind: Self::kind_for(&self.d_levels),
                d: *self.d_levels.last().unwrap(),
                d_star: self.d_levels[0],
            },
            Variable::new("l", Self::kind_for(&self.l_levels)),
            Variable::new("x", Self::kind_for(&self.x_levels)),
            Variable::new("y", Self::kind_for(&self.y_levels)),
        )
        .expect("process schema is valid")
    }

    /// Ancestral sampling in causal order; deterministic given the seed.
    pub fn sample_dataset(&self, n: usize, seed: u64) -> CausalDataset {
        let key = RngKey::new(seed).tagged(Tag::DgpSample);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let draw = |slot: u64, probs: &[f64], levels: &[f64]| {
                    let mut s = key.stream_at(i as u64, slot, 0);
                    levels[categorical(probs, &mut s)]
                };
                let v = draw(0, &self.p_v, &self.v_levels);
                let vi = Self::level_index(&self.v_levels, v, "v");
                let d = draw(1, &self.p_d_given_v[vi], &self.d_levels);
                let di = Self::level_index(&self.d_levels, d, "d");
                let l = draw(2, &self.p_l_given_vd[vi][di], &self.l_levels);
                let li = Self::level_index(&self.l_levels, l, "l");
                let x = draw(3, &self.p_x_given_vdl[vi][di][li], &self.x_levels);
                let xi = Self::level_index(&self.x_levels, x, "x");
                let y = draw(4, &self.p_y_given_vdlx[vi][di][li][xi], &self.y_levels);
                vec![v, d, l, x, y]
            })
            .collect();
        CausalDataset::new(self.schema(), rows).expect("sampled data is in support")
    }
}

fn categorical(probs: &[f64], stream: &mut Stream) -> usize {
    let u = stream.uniform();
    let mut cum = 0.0;
    for (k, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return k;
        }
    }
    probs.len() - 1
}

/// Exact effect values for a contrast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactEffects {
    pub pse_dy: f64,
    pub pse_dxy: f64,
    pub pse_dly: f64,
    pub ate: f64,
    pub mnde: f64,
    pub mnie: f64,
    pub ide: f64,
    pub iie: f64,
    pub oe: f64,
}

/// Linear structural model with gaussian noise:
///
/// L = a0 + a1 V + a2 D + eps_L,
/// X = b0 + b1 V + b2 D + b3 L + eps_X,
/// Y = c0 + c1 V + c2 D + c3 L + c4 X + eps_Y,
///
/// with V ~ N(0, 1) and D ~ Bernoulli(1/2), so all path-specific effects are
/// coefficient products.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearGaussianDgp {
    pub a: [f64; 3],
    pub b: [f64; 4],
    pub c: [f64; 5],
    pub sd_l: f64,
    pub sd_x: f64,
    pub sd_y: f64,
}

impl LinearGaussianDgp {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.sd_l <= 0.0 || self.sd_x <= 0.0 || self.sd_y <= 0.0 {
            return Err(DataError::Validation("noise SDs must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form effects under linearity; every contrast scales with
    /// delta = d - d*.
    pub fn exact_effects(&self, d: f64, d_star: f64) -> ExactEffects {
        let delta = d - d_star;
        let (a2, b2, b3) = (self.a[2], self.b[2], self.b[3]);
        let (c2, c3, c4) = (self.c[2], self.c[3], self.c[4]);
        let pse_dy = c2 * delta;
        let pse_dxy = c4 * b2 * delta;
        let pse_dly = (c3 * a2 + c4 * b3 * a2) * delta;
        let ide = (c2 + c3 * a2) * delta;
        let iie = c4 * (b2 + b3 * a2) * delta;
        ExactEffects {
            pse_dy,
            pse_dxy,
            pse_dly,
            ate: pse_dy + pse_dxy + pse_dly,
            mnde: pse_dy,
            mnie: pse_dxy + pse_dly,
            ide,
            iie,
            oe: ide + iie,
        }
    }

    pub fn schema(&self) -> CausalSchema {
        CausalSchema::new(
            vec![Variable::new("v", VariableKind::Continuous)],
            Treatment { name: "d".into(), kind: VariableKind::Binary, d: 1.0, d_star: 0.0 },
            Variable::new("l", VariableKind::Continuous),
            Variable::new("x", VariableKind::Continuous),
            Variable::new("y", VariableKind::Continuous),
        )
        .expect("linear schema is valid")
    }

    pub fn sample_dataset(&self, n: usize, seed: u64) -> CausalDataset {
        let key = RngKey::new(seed).tagged(Tag::DgpSample);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let noise = |slot: u64| key.stream_at(i as u64, slot, 0).normal();
                let mut coin = key.stream_at(i as u64, 1, 0);
                let v = noise(0);
                let d = if coin.uniform() < 0.5 { 1.0 } else { 0.0 };
                let l = self.a[0] + self.a[1] * v + self.a[2] * d + self.sd_l * noise(2);
                let x = self.b[0] + self.b[1] * v + self.b[2] * d + self.b[3] * l
                    + self.sd_x * noise(3);
                let y = self.c[0]
                    + self.c[1] * v
                    + self.c[2] * d
                    + self.c[3] * l
                    + self.c[4] * x
                    + self.sd_y * noise(4);
                vec![v, d, l, x, y]
            })
            .collect();
        CausalDataset::new(self.schema(), rows).expect("sampled data is valid")
    }
}

/// The all-binary process used throughout the test and acceptance suites.
pub fn demo_binary_dgp() -> DiscreteDgp {
    let b = |p1: f64| vec![1.0 - p1, p1];
    DiscreteDgp {
        v_levels: vec![0.0, 1.0],
        d_levels: vec![0.0, 1.0],
        l_levels: vec![0.0, 1.0],
        x_levels: vec![0.0, 1.0],
        y_levels: vec![0.0, 1.0],
        p_v: b(0.4),
        p_d_given_v: vec![b(0.5), b(0.6)],
        p_l_given_vd: vec![vec![b(0.30), b(0.55)], vec![b(0.40), b(0.70)]],
        p_x_given_vdl: vec![
            vec![vec![b(0.20), b(0.45)], vec![b(0.35), b(0.65)]],
            vec![vec![b(0.25), b(0.50)], vec![b(0.45), b(0.75)]],
        ],
        p_y_given_vdlx: vec![
            vec![
                vec![vec![b(0.15), b(0.40)], vec![b(0.27), b(0.56)]],
                vec![vec![b(0.35), b(0.54)], vec![b(0.47), b(0.70)]],
            ],
            vec![
                vec![vec![b(0.25), b(0.50)], vec![b(0.37), b(0.66)]],
                vec![vec![b(0.45), b(0.64)], vec![b(0.57), b(0.80)]],
            ],
        ],
    }
}

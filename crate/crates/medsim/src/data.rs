//! Causal schema and dataset container.
//!
//! A dataset declares variable roles up front: baseline confounders `V`, a
//! treatment `D` with its contrast pair (d, d*), exactly two causally ordered
//! mediators (`L` first, `X` second), and an outcome `Y`. Ingestion validates
//! every value against the declared kind; rows with missing cells are
//! rejected rather than imputed, since silent imputation would change the
//! estimand.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Tolerance for validating that stored discrete codes are exact integers.
const DISCRETE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Continuous,
    /// Stored as ordinal with two levels {0, 1} but keeps its own tag.
    Binary,
    /// K ordered levels coded 0..K-1.
    Ordinal {
        levels: u32,
    },
    /// Non-negative integer.
    Count,
}

impl VariableKind {
    pub fn is_discrete(&self) -> bool {
        !matches!(self, VariableKind::Continuous)
    }

    /// Number of levels for bounded discrete kinds.
    pub fn level_count(&self) -> Option<u32> {
        match self {
            VariableKind::Binary => Some(2),
            VariableKind::Ordinal { levels } => Some(*levels),
            _ => None,
        }
    }

    /// Checks a raw value against the declared support.
    pub fn validate(&self, value: f64) -> Result<(), String> {
        if !value.is_finite() {
            return Err("non-finite value".to_string());
        }
        match self {
            VariableKind::Continuous => Ok(()),
            VariableKind::Binary => check_integer_in(value, 0.0, 1.0),
            VariableKind::Ordinal { levels } => {
                check_integer_in(value, 0.0, (*levels as f64) - 1.0)
            }
            VariableKind::Count => {
                let r = value.round();
                if (value - r).abs() > DISCRETE_TOL || r < 0.0 {
                    Err(format!("expected a non-negative integer, got {value}"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

fn check_integer_in(value: f64, lo: f64, hi: f64) -> Result<(), String> {
    let r = value.round();
    if (value - r).abs() > DISCRETE_TOL || r < lo || r > hi {
        Err(format!("expected an integer in [{lo}, {hi}], got {value}"))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VariableKind,
}

impl Variable {
    pub fn new(name: impl Into<String>, kind: VariableKind) -> Self {
        Variable { name: name.into(), kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Treatment {
    pub name: String,
    pub kind: VariableKind,
    /// The "treated" contrast value d.
    pub d: f64,
    /// The reference contrast value d*.
    pub d_star: f64,
}

/// Variable roles; mediator order (L before X) is fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalSchema {
    confounders: Vec<Variable>,
    treatment: Treatment,
    first_mediator: Variable,
    second_mediator: Variable,
    outcome: Variable,
}

impl CausalSchema {
    pub fn new(
        confounders: Vec<Variable>,
        treatment: Treatment,
        first_mediator: Variable,
        second_mediator: Variable,
        outcome: Variable,
    ) -> Result<Self, DataError> {
        let schema = CausalSchema {
            confounders,
            treatment,
            first_mediator,
            second_mediator,
            outcome,
        };
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<(), DataError> {
        let mut names: Vec<&str> = self.variable_names().collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(DataError::Schema("variable names must be distinct".into()));
        }
        for var in self.variables() {
            if let VariableKind::Ordinal { levels } = var.kind {
                if levels < 2 {
                    return Err(DataError::Schema(format!(
                        "ordinal variable '{}' needs at least 2 levels",
                        var.name
                    )));
                }
            }
        }
        if self.treatment.d == self.treatment.d_star {
            return Err(DataError::Schema(format!(
                "treatment contrast is degenerate: d = d* = {}",
                self.treatment.d
            )));
        }
        for (label, value) in [("d", self.treatment.d), ("d*", self.treatment.d_star)] {
            self.treatment.kind.validate(value).map_err(|e| {
                DataError::Schema(format!("treatment contrast {label} invalid: {e}"))
            })?;
        }
        Ok(())
    }

    pub fn confounders(&self) -> &[Variable] {
        &self.confounders
    }

    pub fn treatment(&self) -> &Treatment {
        &self.treatment
    }

    pub fn first_mediator(&self) -> &Variable {
        &self.first_mediator
    }

    pub fn second_mediator(&self) -> &Variable {
        &self.second_mediator
    }

    pub fn outcome(&self) -> &Variable {
        &self.outcome
    }

    /// All variables in storage order: confounders, D, L, X, Y.
    pub fn variables(&self) -> Vec<Variable> {
        let mut out = self.confounders.clone();
        out.push(Variable::new(
            self.treatment.name.clone(),
            self.treatment.kind,
        ));
        out.push(self.first_mediator.clone());
        out.push(self.second_mediator.clone());
        out.push(self.outcome.clone());
        out
    }

    pub fn variable_names(&self) -> impl Iterator<Item = &str> {
        self.confounders
            .iter()
            .map(|v| v.name.as_str())
            .chain(std::iter::once(self.treatment.name.as_str()))
            .chain(std::iter::once(self.first_mediator.name.as_str()))
            .chain(std::iter::once(self.second_mediator.name.as_str()))
            .chain(std::iter::once(self.outcome.name.as_str()))
    }

    pub fn n_variables(&self) -> usize {
        self.confounders.len() + 4
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variable_names().position(|n| n == name)
    }

    pub fn kind_of(&self, name: &str) -> Option<VariableKind> {
        self.variables()
            .into_iter()
            .find(|v| v.name == name)
            .map(|v| v.kind)
    }

    pub fn treatment_index(&self) -> usize {
        self.confounders.len()
    }

    pub fn first_mediator_index(&self) -> usize {
        self.confounders.len() + 1
    }

    pub fn second_mediator_index(&self) -> usize {
        self.confounders.len() + 2
    }

    pub fn outcome_index(&self) -> usize {
        self.confounders.len() + 3
    }

    pub fn confounder_indices(&self) -> std::ops::Range<usize> {
        0..self.confounders.len()
    }
}

/// Validated tabular data; immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalDataset {
    schema: CausalSchema,
    /// Row-major values, `n * p` with `p = schema.n_variables()`.
    values: Vec<f64>,
    n: usize,
}

impl CausalDataset {
    pub fn new(schema: CausalSchema, rows: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let p = schema.n_variables();
        let n = rows.len();
        if n == 0 {
            return Err(DataError::Validation("dataset must have at least one row".into()));
        }
        let mut values = Vec::with_capacity(n * p);
        let vars = schema.variables();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(DataError::Validation(format!(
                    "row {i} has {} values, expected {p}",
                    row.len()
                )));
            }
            for (var, &value) in vars.iter().zip(row.iter()) {
                var.kind.validate(value).map_err(|e| {
                    DataError::Validation(format!("row {i}, column '{}': {e}", var.name))
                })?;
            }
            values.extend_from_slice(row);
        }
        Ok(CausalDataset { schema, values, n })
    }

    pub fn schema(&self) -> &CausalSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.schema.n_variables();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, var_index: usize) -> Vec<f64> {
        let p = self.schema.n_variables();
        (0..self.n).map(|i| self.values[i * p + var_index]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.schema.index_of(name).map(|j| self.column(j))
    }

    /// Dataset consisting of the given rows (with repetition allowed), e.g.
    /// a bootstrap resample.
    pub fn select_rows(&self, indices: &[usize]) -> CausalDataset {
        let p = self.schema.n_variables();
        let mut values = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        CausalDataset { schema: self.schema.clone(), values, n: indices.len() }
    }

    /// Loads a CSV file with a header row. Column order is irrelevant and
    /// extra columns are ignored; every schema variable must be present.
    pub fn load_csv(path: impl AsRef<Path>, schema: &CausalSchema) -> Result<Self, DataError> {
        let mut reader =
            csv::Reader::from_path(path.as_ref()).map_err(|e| DataError::Io(e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| DataError::Io(e.to_string()))?
            .clone();
        let positions: Vec<(String, usize)> = schema
            .variable_names()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h.trim() == name)
                    .map(|pos| (name.to_string(), pos))
                    .ok_or_else(|| DataError::Schema(format!("missing column '{name}'")))
            })
            .collect::<Result<_, _>>()?;

        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| DataError::Io(e.to_string()))?;
            let mut row = Vec::with_capacity(positions.len());
            for (name, pos) in &positions {
                let cell = record.get(*pos).unwrap_or("").trim();
                if cell.is_empty() {
                    return Err(DataError::Parse(format!(
                        "row {}, column '{name}': missing value (complete cases required)",
                        i + 1
                    )));
                }
                let value: f64 = cell.parse().map_err(|_| {
                    DataError::Parse(format!(
                        "row {}, column '{name}': cannot parse '{cell}' as a number",
                        i + 1
                    ))
                })?;
                row.push(value);
            }
            rows.push(row);
        }
        CausalDataset::new(schema.clone(), rows)
    }

    /// Writes schema columns (in storage order) as CSV; inverse of
    /// [`CausalDataset::load_csv`] on validated data.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut writer =
            csv::Writer::from_path(path.as_ref()).map_err(|e| DataError::Io(e.to_string()))?;
        let names: Vec<&str> = self.schema.variable_names().collect();
        writer
            .write_record(&names)
            .map_err(|e| DataError::Io(e.to_string()))?;
        for i in 0..self.n {
            let fields: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            writer
                .write_record(&fields)
                .map_err(|e| DataError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| DataError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn summarize(&self) -> Vec<VariableSummary> {
        self.schema
            .variables()
            .iter()
            .enumerate()
            .map(|(j, var)| {
                let col = self.column(j);
                let mean = crate::numeric::mean(&col);
                let sd = crate::numeric::sample_sd(&col);
                let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let frequencies = if var.kind.is_discrete() {
                    let mut freq = BTreeMap::new();
                    for &v in &col {
                        *freq.entry(v.round() as i64).or_insert(0usize) += 1;
                    }
                    Some(freq)
                } else {
                    None
                };
                VariableSummary { name: var.name.clone(), kind: var.kind, mean, sd, min, max, frequencies }
            })
            .collect()
    }
}

/// Per-variable summary statistics.
#[derive(Debug, Clone, Serialize)]
pub struct VariableSummary {
    pub name: String,
    pub kind: VariableKind,
    pub mean: f64,
    /// Sample SD (n-1 denominator); `None` when n < 2.
    pub sd: Option<f64>,
    pub min: f64,
    pub max: f64,
    pub frequencies: Option<BTreeMap<i64, usize>>,
}

impl fmt::Display for VariableSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: mean {:.4}, sd {}, range [{}, {}]",
            self.name,
            self.mean,
            self.sd.map_or("undefined".into(), |s| format!("{s:.4}")),
            self.min,
            self.max
        )
    }
}

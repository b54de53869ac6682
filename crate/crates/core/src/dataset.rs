//! Time-ordered observations with column roles.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Outcome,
    Policy,
    Control,
    /// Transmission channel: only ever enters the controls lagged.
    Channel,
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "outcome" => Ok(Role::Outcome),
            "policy" => Ok(Role::Policy),
            "control" => Ok(Role::Control),
            "channel" => Ok(Role::Channel),
            other => Err(invalid(format!("unknown role '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
    pub values: Vec<f64>,
}

/// Ordered observations: exactly one outcome, one policy, any number of
/// controls and channels, and a label per time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    index: Vec<String>,
    columns: Vec<Column>,
}

impl TimeSeriesDataset {
    pub fn new(index: Vec<String>, columns: Vec<Column>) -> Result<Self> {
        let t = index.len();
        let mut names = HashSet::new();
        for c in &columns {
            if c.values.len() != t {
                return Err(Error::DimensionMismatch(format!(
                    "column '{}' has {} values, index has {t}",
                    c.name,
                    c.values.len()
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(invalid(format!("duplicate column name '{}'", c.name)));
            }
            if let Some(row) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::MissingValue { row, column: c.name.clone() });
            }
        }
        let mut seen = HashSet::new();
        if let Some(dup) = index.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(invalid(format!("duplicate time label '{dup}'")));
        }
        for role in [Role::Outcome, Role::Policy] {
            let n = columns.iter().filter(|c| c.role == role).count();
            if n != 1 {
                return Err(invalid(format!("dataset needs exactly one {role:?} column, found {n}")));
            }
        }
        Ok(Self { index, columns })
    }

    /// Dataset indexed `0..T` by row number.
    pub fn with_row_index(columns: Vec<Column>) -> Result<Self> {
        let t = columns.first().map_or(0, |c| c.values.len());
        Self::new((0..t).map(|i| i.to_string()).collect(), columns)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index(&self) -> &[String] {
        &self.index
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    fn unique(&self, role: Role) -> &Column {
        self.columns.iter().find(|c| c.role == role).expect("validated at construction")
    }

    pub fn outcome(&self) -> &[f64] {
        &self.unique(Role::Outcome).values
    }

    pub fn policy(&self) -> &[f64] {
        &self.unique(Role::Policy).values
    }

    pub fn outcome_name(&self) -> &str {
        &self.unique(Role::Outcome).name
    }

    pub fn policy_name(&self) -> &str {
        &self.unique(Role::Policy).name
    }

    pub fn control_names(&self) -> Vec<&str> {
        self.columns.iter().filter(|c| c.role == Role::Control).map(|c| c.name.as_str()).collect()
    }

    /// The `T × p` matrix of control columns. Channel columns are never
    /// included; they reach the estimator only through their lags.
    pub fn controls(&self) -> Result<Matrix> {
        let cols: Vec<&[f64]> =
            self.columns.iter().filter(|c| c.role == Role::Control).map(|c| c.values.as_slice()).collect();
        if cols.is_empty() {
            return Err(invalid("dataset has no control columns"));
        }
        Matrix::from_columns(&cols)
    }

    pub fn roles(&self) -> BTreeMap<String, Role> {
        self.columns.iter().map(|c| (c.name.clone(), c.role)).collect()
    }

    /// Names of columns whose values do not vary.
    pub fn constant_columns(&self) -> Vec<&str> {
        self.columns.iter().filter(|c| c.values.windows(2).all(|w| w[0] == w[1])).map(|c| c.name.as_str()).collect()
    }

    /// Applies `f` to every value of the columns carrying `role`.
    pub fn map_role(&self, role: Role, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for c in out.columns.iter_mut().filter(|c| c.role == role) {
            c.values.iter_mut().for_each(|v| *v = f(*v));
        }
        out
    }

    /// Same values with roles reassigned.
    pub fn with_roles(&self, roles: &BTreeMap<String, Role>) -> Result<Self> {
        let mut columns = self.columns.clone();
        for c in columns.iter_mut() {
            if let Some(r) = roles.get(&c.name) {
                c.role = *r;
            }
        }
        Self::new(self.index.clone(), columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(name: &str, role: Role, values: Vec<f64>) -> Column {
        Column { name: name.into(), role, values }
    }

    #[test]
    fn requires_single_outcome_and_policy() {
        let err = TimeSeriesDataset::with_row_index(vec![col("y", Role::Outcome, vec![1.0, 2.0])]);
        assert!(err.is_err());
        let ok = TimeSeriesDataset::with_row_index(vec![
            col("y", Role::Outcome, vec![1.0, 2.0]),
            col("d", Role::Policy, vec![0.0, 1.0]),
            col("x", Role::Control, vec![3.0, 3.0]),
            col("c", Role::Channel, vec![5.0, 6.0]),
        ])
        .unwrap();
        assert_eq!(ok.controls().unwrap().cols(), 1);
        assert_eq!(ok.constant_columns(), vec!["x"]);
    }

    #[test]
    fn rejects_duplicate_labels() {
        let err = TimeSeriesDataset::new(
            vec!["a".into(), "a".into()],
            vec![col("y", Role::Outcome, vec![1.0, 2.0]), col("d", Role::Policy, vec![0.0, 1.0])],
        );
        assert!(err.is_err());
    }
}

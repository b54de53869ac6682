//! CSV ingestion, stationarity transforms and lag construction.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Column, Role, TimeSeriesDataset};
use crate::error::{invalid, Error, Result};

/// Roles for every data column, plus an optional column holding time labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleMap {
    #[serde(default)]
    pub time_column: Option<String>,
    pub roles: BTreeMap<String, Role>,
}

impl RoleMap {
    /// Parses role names, rejecting unknown ones.
    pub fn from_names(time_column: Option<String>, roles: &BTreeMap<String, String>) -> Result<Self> {
        let roles = roles.iter().map(|(k, v)| Ok((k.clone(), v.parse()?))).collect::<Result<_>>()?;
        Ok(Self { time_column, roles })
    }
}

/// Reads a headed CSV. Lines starting with `#` are comments. Rows keep
/// their file order; without a time column rows are labelled `0..T`.
pub fn read_csv(reader: impl Read, roles: &RoleMap) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut seen = HashSet::new();
    if let Some(dup) = headers.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(invalid(format!("duplicate column header '{dup}'")));
    }
    if let Some(tc) = &roles.time_column {
        if !headers.contains(tc) {
            return Err(invalid(format!("time column '{tc}' not found in header")));
        }
    }
    for name in roles.roles.keys() {
        if !headers.contains(name) {
            return Err(invalid(format!("role given for unknown column '{name}'")));
        }
    }
    for h in &headers {
        if Some(h) != roles.time_column.as_ref() && !roles.roles.contains_key(h) {
            return Err(invalid(format!("column '{h}' has no role")));
        }
    }

    let mut index = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(invalid(format!("row {} has {} fields, header has {}", row + 1, rec.len(), headers.len())));
        }
        for (j, cell) in rec.iter().enumerate() {
            if Some(&headers[j]) == roles.time_column.as_ref() {
                if cell.is_empty() {
                    return Err(Error::MissingValue { row: row + 1, column: headers[j].clone() });
                }
                index.push(cell.to_owned());
                continue;
            }
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(Error::MissingValue { row: row + 1, column: headers[j].clone() });
            }
            let v: f64 = cell.parse().map_err(|_| {
                invalid(format!("row {}, column '{}': cannot parse '{cell}' as a number", row + 1, headers[j]))
            })?;
            values[j].push(v);
        }
    }
    let columns: Vec<Column> = headers
        .iter()
        .zip(values)
        .filter(|(h, _)| Some(*h) != roles.time_column.as_ref())
        .map(|(h, v)| Column { name: h.clone(), role: roles.roles[h], values: v })
        .collect();
    if roles.time_column.is_some() {
        TimeSeriesDataset::new(index, columns)
    } else {
        TimeSeriesDataset::with_row_index(columns)
    }
}

pub fn load_csv(path: impl AsRef<Path>, roles: &RoleMap) -> Result<TimeSeriesDataset> {
    read_csv(std::fs::File::open(path)?, roles)
}

/// Writes the time labels (under `time_column`) followed by every column,
/// with values at full round-trip precision. Each comment is written first
/// as a `# ` line.
pub fn write_csv_to(w: impl Write, data: &TimeSeriesDataset, time_column: &str, comments: &[String]) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    for c in comments {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![time_column.to_owned()];
    header.extend(data.columns().iter().map(|c| c.name.clone()));
    out.write_record(&header)?;
    for t in 0..data.len() {
        let mut rec = vec![data.index()[t].clone()];
        rec.extend(data.columns().iter().map(|c| c.values[t].to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv(
    path: impl AsRef<Path>,
    data: &TimeSeriesDataset,
    time_column: &str,
    comments: &[String],
) -> Result<()> {
    write_csv_to(std::fs::File::create(path)?, data, time_column, comments)
}

/// Role map matching a dataset written by [`write_csv`].
pub fn role_map_of(data: &TimeSeriesDataset, time_column: &str) -> RoleMap {
    RoleMap { time_column: Some(time_column.to_owned()), roles: data.roles() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    Diff,
    LogDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformSpec {
    pub lags: usize,
    /// Columns not listed are left untransformed.
    pub transforms: BTreeMap<String, Transform>,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self { lags: 3, transforms: BTreeMap::new() }
    }
}

impl TransformSpec {
    pub fn identity() -> Self {
        Self { lags: 0, transforms: BTreeMap::new() }
    }
}

fn apply(transform: Transform, name: &str, v: &[f64]) -> Result<Vec<f64>> {
    match transform {
        Transform::None => Ok(v.to_vec()),
        Transform::Diff => Ok(std::iter::once(f64::NAN).chain(v.windows(2).map(|w| w[1] - w[0])).collect()),
        Transform::LogDiff => {
            if let Some(row) = v.iter().position(|x| !(*x > 0.0)) {
                return Err(invalid(format!(
                    "log_diff on column '{name}' needs positive values; row {} is {}",
                    row + 1,
                    v[row]
                )));
            }
            Ok(std::iter::once(f64::NAN).chain(v.windows(2).map(|w| w[1].ln() - w[0].ln())).collect())
        }
    }
}

/// Applies the transforms, then appends lags `1..=L` of every column as
/// controls named `{name}_lag{l}`. Channel columns are kept only as lags.
/// Leading rows with incomplete values are dropped.
pub fn transform_and_lag(data: &TimeSeriesDataset, spec: &TransformSpec) -> Result<TimeSeriesDataset> {
    for name in spec.transforms.keys() {
        if data.column(name).is_none() {
            return Err(invalid(format!("transform given for unknown column '{name}'")));
        }
    }
    let transformed: Vec<Column> = data
        .columns()
        .iter()
        .map(|c| {
            let t = spec.transforms.get(&c.name).copied().unwrap_or_default();
            Ok(Column { name: c.name.clone(), role: c.role, values: apply(t, &c.name, &c.values)? })
        })
        .collect::<Result<_>>()?;

    let t_len = data.len();
    let mut columns: Vec<Column> = transformed.iter().filter(|c| c.role != Role::Channel).cloned().collect();
    for l in 1..=spec.lags {
        for c in &transformed {
            let values = (0..t_len).map(|t| if t >= l { c.values[t - l] } else { f64::NAN }).collect();
            columns.push(Column { name: format!("{}_lag{l}", c.name), role: Role::Control, values });
        }
    }
    let start = (0..t_len).find(|&t| columns.iter().all(|c| c.values[t].is_finite())).unwrap_or(t_len);
    if (start..t_len).any(|t| columns.iter().any(|c| !c.values[t].is_finite())) {
        return Err(Error::NonFinite("transformed data beyond the leading rows".into()));
    }
    if start >= t_len {
        return Err(invalid("no complete rows remain after transforms and lags"));
    }
    for c in columns.iter_mut() {
        c.values.drain(..start);
    }
    TimeSeriesDataset::new(data.index()[start..].to_vec(), columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(pairs: &[(&str, Role)]) -> RoleMap {
        RoleMap { time_column: Some("date".into()), roles: pairs.iter().map(|(k, r)| (k.to_string(), *r)).collect() }
    }

    const TOY: &str = "date,y,d,x\n2000Q1,1.5,0.1,3\n2000Q2,1.7,0.2,2.5\n2000Q3,1.2,-0.3,2.75\n";

    fn toy_roles() -> RoleMap {
        roles(&[("y", Role::Outcome), ("d", Role::Policy), ("x", Role::Control)])
    }

    #[test]
    fn reads_a_toy_file() {
        let ds = read_csv(TOY.as_bytes(), &toy_roles()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.index()[2], "2000Q3");
        assert_eq!(ds.outcome(), &[1.5, 1.7, 1.2]);
        assert_eq!(ds.control_names(), vec!["x"]);
    }

    #[test]
    fn blank_cell_names_its_location() {
        let text = "date,y,d,x\n2000Q1,1.5,0.1,3\n2000Q2,1.7,,2.5\n";
        match read_csv(text.as_bytes(), &toy_roles()) {
            Err(Error::MissingValue { row, column }) => assert_eq!((row, column.as_str()), (2, "d")),
            other => panic!("expected a missing-value error, got {other:?}"),
        }
    }

    #[test]
    fn validates_roles_and_labels() {
        let missing = roles(&[("y", Role::Outcome), ("d", Role::Policy)]);
        assert!(read_csv(TOY.as_bytes(), &missing).is_err());
        let mut names = BTreeMap::new();
        names.insert("y".to_string(), "treatment".to_string());
        assert!(RoleMap::from_names(None, &names).is_err());
        let dup = "date,y,d,x\nA,1,2,3\nA,2,3,4\n";
        assert!(read_csv(dup.as_bytes(), &toy_roles()).is_err());
        let ragged = "date,y,d,x\nA,1,2\n";
        assert!(read_csv(ragged.as_bytes(), &toy_roles()).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let vals = [0.1 + 0.2, 1.0 / 3.0, -2.5e-300, 1e300, std::f64::consts::PI];
        let data = TimeSeriesDataset::with_row_index(vec![
            Column { name: "y".into(), role: Role::Outcome, values: vals.to_vec() },
            Column { name: "d".into(), role: Role::Policy, values: vals.iter().map(|v| v * 7.0).collect() },
            Column { name: "m".into(), role: Role::Channel, values: vals.iter().map(|v| -v).collect() },
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &data, "t", &["seed = 3".into()]).unwrap();
        let back = read_csv(buf.as_slice(), &role_map_of(&data, "t")).unwrap();
        assert_eq!(back, data);
    }

    fn series(n: usize) -> TimeSeriesDataset {
        let f = |a: f64| (0..n).map(|t| a + (t as f64 * 0.37 + a).sin() + 0.01 * t as f64).collect::<Vec<_>>();
        TimeSeriesDataset::with_row_index(vec![
            Column { name: "y".into(), role: Role::Outcome, values: f(5.0) },
            Column { name: "d".into(), role: Role::Policy, values: f(3.0) },
            Column { name: "x".into(), role: Role::Control, values: f(4.0) },
            Column { name: "c".into(), role: Role::Channel, values: f(6.0) },
            Column { name: "k".into(), role: Role::Control, values: vec![2.0; n] },
        ])
        .unwrap()
    }

    #[test]
    fn identity_spec_only_drops_channels() {
        let data = series(20);
        let out = transform_and_lag(&data, &TransformSpec::identity()).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(out.columns().len(), 4);
        assert!(out.column("c").is_none());
        assert_eq!(out.column("x"), data.column("x"));
    }

    #[test]
    fn lags_trim_the_sample() {
        let data = series(100);
        let out = transform_and_lag(&data, &TransformSpec { lags: 3, transforms: BTreeMap::new() }).unwrap();
        assert_eq!(out.len(), 97);
        assert_eq!(out.columns().len(), 4 + 3 * 5);
        assert_eq!(out.index()[0], "3");
        assert!(out.column("c").is_none());
        assert_eq!(out.column("c_lag1").unwrap().role, Role::Control);
        assert_eq!(out.column("y_lag2").unwrap().values[0], data.outcome()[1]);
        let idx: Vec<usize> = out.index().iter().map(|s| s.parse().unwrap()).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(!out.controls().unwrap().data().is_empty());
    }

    #[test]
    fn transforms_precede_lags() {
        let data = series(30);
        let mut transforms = BTreeMap::new();
        transforms.insert("k".to_string(), Transform::Diff);
        transforms.insert("y".to_string(), Transform::LogDiff);
        let out = transform_and_lag(&data, &TransformSpec { lags: 2, transforms }).unwrap();
        assert_eq!(out.len(), 27);
        assert!(out.column("k").unwrap().values.iter().all(|v| *v == 0.0));
        assert!(out.constant_columns().contains(&"k"));
        let y = data.outcome();
        let expected = y[2].ln() - y[1].ln();
        assert!((out.column("y_lag1").unwrap().values[0] - expected).abs() < 1e-15);

        let mut bad = BTreeMap::new();
        bad.insert("d".to_string(), Transform::LogDiff);
        let neg = data.map_role(Role::Policy, |v| v - 100.0);
        assert!(transform_and_lag(&neg, &TransformSpec { lags: 1, transforms: bad }).is_err());
    }
}

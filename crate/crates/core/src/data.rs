//! Two-level datasets: typed column blocks, the column-role manifest, CSV
//! ingestion/export and the fixed-effect design builder.
//!
//! Categorical levels and group labels are coded `0..k` internally in
//! first-appearance order unless the manifest pins an explicit level list.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dists::ising::Domain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Response,
    Group,
    Continuous,
    Categorical,
    Dichotomous,
    FixedOnly,
    Ignore,
}

/// Maps column names to roles. Block order follows the CSV header order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleManifest {
    pub roles: BTreeMap<String, Role>,
    /// Optional explicit level order per categorical column.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub levels: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub domain: Domain,
}

impl RoleManifest {
    pub fn new<I, S>(roles: I) -> Self
    where
        I: IntoIterator<Item = (S, Role)>,
        S: Into<String>,
    {
        Self {
            roles: roles.into_iter().map(|(k, r)| (k.into(), r)).collect(),
            levels: BTreeMap::new(),
            domain: Domain::ZeroOne,
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_levels(mut self, column: &str, levels: Vec<String>) -> Self {
        self.levels.insert(column.to_string(), levels);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericColumn {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    /// Code -> label.
    pub levels: Vec<String>,
    /// Zero-based level codes.
    pub codes: Vec<usize>,
}

impl CategoricalColumn {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryColumn {
    pub name: String,
    pub values: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub response_name: String,
    /// False when the file carried no response column (prediction inputs).
    pub has_response: bool,
    pub y: Vec<u8>,
    pub group_name: String,
    pub group_labels: Vec<String>,
    pub groups: Vec<usize>,
    pub continuous: Vec<NumericColumn>,
    pub categorical: Vec<CategoricalColumn>,
    pub dichotomous: Vec<BinaryColumn>,
    pub fixed_only: Vec<NumericColumn>,
    pub domain: Domain,
}

/// The typed layout of a dataset without its rows; persisted with fits so new
/// files are decoded with the training level maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSchema {
    pub response: String,
    pub group: String,
    pub group_labels: Vec<String>,
    pub continuous: Vec<String>,
    pub categorical: Vec<(String, Vec<String>)>,
    pub dichotomous: Vec<String>,
    pub fixed_only: Vec<String>,
    pub domain: Domain,
}

impl Dataset {
    pub fn n_obs(&self) -> usize {
        self.groups.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous.len()
    }

    pub fn n_binary(&self) -> usize {
        self.dichotomous.len()
    }

    pub fn category_counts(&self) -> Vec<usize> {
        self.categorical.iter().map(|c| c.n_levels()).collect()
    }

    /// N x p matrix of the continuous block.
    pub fn continuous_matrix(&self) -> DMatrix<f64> {
        let n = self.n_obs();
        let p = self.continuous.len();
        DMatrix::from_fn(n, p, |i, k| self.continuous[k].values[i])
    }

    pub fn continuous_row(&self, i: usize) -> Vec<f64> {
        self.continuous.iter().map(|c| c.values[i]).collect()
    }

    pub fn categorical_row(&self, i: usize) -> Vec<usize> {
        self.categorical.iter().map(|c| c.codes[i]).collect()
    }

    pub fn binary_row(&self, i: usize) -> Vec<i8> {
        self.dichotomous.iter().map(|c| c.values[i]).collect()
    }

    pub fn schema(&self) -> DataSchema {
        DataSchema {
            response: self.response_name.clone(),
            group: self.group_name.clone(),
            group_labels: self.group_labels.clone(),
            continuous: self.continuous.iter().map(|c| c.name.clone()).collect(),
            categorical: self
                .categorical
                .iter()
                .map(|c| (c.name.clone(), c.levels.clone()))
                .collect(),
            dichotomous: self.dichotomous.iter().map(|c| c.name.clone()).collect(),
            fixed_only: self.fixed_only.iter().map(|c| c.name.clone()).collect(),
            domain: self.domain,
        }
    }

    /// Rows `idx` in the given order; level maps and group labels are kept.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let pick_f = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            response_name: self.response_name.clone(),
            has_response: self.has_response,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            group_name: self.group_name.clone(),
            group_labels: self.group_labels.clone(),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
            continuous: self
                .continuous
                .iter()
                .map(|c| NumericColumn {
                    name: c.name.clone(),
                    values: pick_f(&c.values),
                })
                .collect(),
            categorical: self
                .categorical
                .iter()
                .map(|c| CategoricalColumn {
                    name: c.name.clone(),
                    levels: c.levels.clone(),
                    codes: idx.iter().map(|&i| c.codes[i]).collect(),
                })
                .collect(),
            dichotomous: self
                .dichotomous
                .iter()
                .map(|c| BinaryColumn {
                    name: c.name.clone(),
                    values: idx.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
            fixed_only: self
                .fixed_only
                .iter()
                .map(|c| NumericColumn {
                    name: c.name.clone(),
                    values: pick_f(&c.values),
                })
                .collect(),
            domain: self.domain,
        }
    }

    /// Manifest reproducing this dataset's roles and level orders.
    pub fn manifest(&self) -> RoleManifest {
        let mut m = RoleManifest::default().with_domain(self.domain);
        m.roles.insert(self.response_name.clone(), Role::Response);
        m.roles.insert(self.group_name.clone(), Role::Group);
        for c in &self.continuous {
            m.roles.insert(c.name.clone(), Role::Continuous);
        }
        for c in &self.categorical {
            m.roles.insert(c.name.clone(), Role::Categorical);
            m.levels.insert(c.name.clone(), c.levels.clone());
        }
        for c in &self.dichotomous {
            m.roles.insert(c.name.clone(), Role::Dichotomous);
        }
        for c in &self.fixed_only {
            m.roles.insert(c.name.clone(), Role::FixedOnly);
        }
        m
    }

    fn export_columns(&self) -> Vec<String> {
        let mut cols = Vec::new();
        if self.has_response {
            cols.push(self.response_name.clone());
        }
        cols.push(self.group_name.clone());
        cols.extend(self.continuous.iter().map(|c| c.name.clone()));
        cols.extend(self.categorical.iter().map(|c| c.name.clone()));
        cols.extend(self.dichotomous.iter().map(|c| c.name.clone()));
        cols.extend(self.fixed_only.iter().map(|c| c.name.clone()));
        cols
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.export_columns())?;
        for i in 0..self.n_obs() {
            let mut rec: Vec<String> = Vec::new();
            if self.has_response {
                rec.push(self.y[i].to_string());
            }
            rec.push(self.group_labels[self.groups[i]].clone());
            rec.extend(self.continuous.iter().map(|c| c.values[i].to_string()));
            rec.extend(
                self.categorical
                    .iter()
                    .map(|c| c.levels[c.codes[i]].clone()),
            );
            rec.extend(self.dichotomous.iter().map(|c| c.values[i].to_string()));
            rec.extend(self.fixed_only.iter().map(|c| c.values[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Load a CSV file under a role manifest.
pub fn load_dataset(path: impl AsRef<Path>, manifest: &RoleManifest) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    read_dataset(f, manifest, None)
}

/// Load a CSV file using the level maps of a persisted schema. The response
/// column may be absent; unseen group labels are appended after the known ones.
pub fn load_with_schema(path: impl AsRef<Path>, schema: &DataSchema) -> Result<Dataset> {
    read_with_schema(std::fs::File::open(path)?, schema)
}

/// [`load_with_schema`] over any reader.
pub fn read_with_schema<R: Read>(reader: R, schema: &DataSchema) -> Result<Dataset> {
    let mut manifest = RoleManifest::default().with_domain(schema.domain);
    manifest.roles.insert(schema.response.clone(), Role::Response);
    manifest.roles.insert(schema.group.clone(), Role::Group);
    for c in &schema.continuous {
        manifest.roles.insert(c.clone(), Role::Continuous);
    }
    for (c, levels) in &schema.categorical {
        manifest.roles.insert(c.clone(), Role::Categorical);
        manifest.levels.insert(c.clone(), levels.clone());
    }
    for c in &schema.dichotomous {
        manifest.roles.insert(c.clone(), Role::Dichotomous);
    }
    for c in &schema.fixed_only {
        manifest.roles.insert(c.clone(), Role::FixedOnly);
    }
    read_dataset(reader, &manifest, Some(schema))
}

fn parse_f64(s: &str, row: usize, column: &str) -> Result<f64> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Err(Error::Cell {
            row,
            column: column.to_string(),
            message: "missing value".into(),
        });
    }
    t.parse::<f64>().map_err(|_| Error::Cell {
        row,
        column: column.to_string(),
        message: format!("cannot parse `{t}` as a number"),
    })
}

fn require_present(s: &str, row: usize, column: &str) -> Result<String> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") {
        return Err(Error::Cell {
            row,
            column: column.to_string(),
            message: "missing value".into(),
        });
    }
    Ok(t.to_string())
}

/// Reads a header-bearing CSV. Rows are reported 1-based counting data rows.
pub fn read_dataset<R: Read>(
    reader: R,
    manifest: &RoleManifest,
    schema: Option<&DataSchema>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let index: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();

    let mut response = None;
    let mut group = None;
    for (name, role) in &manifest.roles {
        let found = index.contains_key(name.as_str());
        match role {
            Role::Ignore => {}
            Role::Response if !found && schema.is_some() => {}
            _ if !found => return Err(Error::MissingColumn(name.clone())),
            Role::Response if response.replace(name.clone()).is_some() => {
                return Err(Error::Config("more than one response column".into()));
            }
            Role::Group if group.replace(name.clone()).is_some() => {
                return Err(Error::Config("more than one group column".into()));
            }
            _ => {}
        }
    }
    let response_name = match (&response, schema) {
        (Some(r), _) => r.clone(),
        (None, Some(s)) => s.response.clone(),
        (None, None) => return Err(Error::Config("manifest has no response column".into())),
    };
    let has_response = response.is_some();
    let group_name = group.ok_or_else(|| Error::Config("manifest has no group column".into()))?;

    // Columns of each role in header order.
    let by_role = |role: Role| -> Vec<String> {
        header
            .iter()
            .filter(|h| manifest.roles.get(*h) == Some(&role))
            .cloned()
            .collect()
    };
    let cont_names = by_role(Role::Continuous);
    let cat_names = by_role(Role::Categorical);
    let bin_names = by_role(Role::Dichotomous);
    let fixed_names = by_role(Role::FixedOnly);

    let mut y = Vec::new();
    let mut group_labels: Vec<String> = schema.map(|s| s.group_labels.clone()).unwrap_or_default();
    let mut group_index: HashMap<String, usize> = group_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect();
    let mut groups = Vec::new();
    let mut cont: Vec<Vec<f64>> = vec![Vec::new(); cont_names.len()];
    let mut fixed: Vec<Vec<f64>> = vec![Vec::new(); fixed_names.len()];
    let mut bin: Vec<Vec<i8>> = vec![Vec::new(); bin_names.len()];
    let mut cat_levels: Vec<Vec<String>> = cat_names
        .iter()
        .map(|n| manifest.levels.get(n).cloned().unwrap_or_default())
        .collect();
    let cat_fixed: Vec<bool> = cat_names
        .iter()
        .map(|n| manifest.levels.contains_key(n))
        .collect();
    let mut cat_index: Vec<HashMap<String, usize>> = cat_levels
        .iter()
        .map(|l| l.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect())
        .collect();
    let mut cat_codes: Vec<Vec<usize>> = vec![Vec::new(); cat_names.len()];

    let domain = manifest.domain;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let cell = |name: &str| rec.get(index[name]).unwrap_or("");

        if has_response {
            let v = parse_f64(cell(&response_name), row, &response_name)?;
            if v == 0.0 {
                y.push(0);
            } else if v == 1.0 {
                y.push(1);
            } else {
                return Err(Error::Cell {
                    row,
                    column: response_name.clone(),
                    message: format!("response `{v}` is not binary"),
                });
            }
        } else {
            y.push(0);
        }

        let g = require_present(cell(&group_name), row, &group_name)?;
        let next = group_labels.len();
        let code = *group_index.entry(g.clone()).or_insert_with(|| {
            group_labels.push(g);
            next
        });
        groups.push(code);

        for (k, name) in cont_names.iter().enumerate() {
            cont[k].push(parse_f64(cell(name), row, name)?);
        }
        for (k, name) in fixed_names.iter().enumerate() {
            fixed[k].push(parse_f64(cell(name), row, name)?);
        }
        for (k, name) in bin_names.iter().enumerate() {
            let v = parse_f64(cell(name), row, name)?;
            let ok = v.fract() == 0.0 && domain.contains(v as i8);
            if !ok {
                return Err(Error::Cell {
                    row,
                    column: name.clone(),
                    message: format!("value `{v}` is not in the {} domain", domain.label()),
                });
            }
            bin[k].push(v as i8);
        }
        for (k, name) in cat_names.iter().enumerate() {
            let label = require_present(cell(name), row, name)?;
            let code = match cat_index[k].get(&label) {
                Some(&c) => c,
                None if cat_fixed[k] => {
                    return Err(Error::UnknownLevel {
                        column: name.clone(),
                        level: label,
                        known: cat_levels[k].clone(),
                    })
                }
                None => {
                    let c = cat_levels[k].len();
                    cat_levels[k].push(label.clone());
                    cat_index[k].insert(label, c);
                    c
                }
            };
            cat_codes[k].push(code);
        }
    }

    Ok(Dataset {
        response_name,
        has_response,
        y,
        group_name,
        group_labels,
        groups,
        continuous: cont_names
            .into_iter()
            .zip(cont)
            .map(|(name, values)| NumericColumn { name, values })
            .collect(),
        categorical: cat_names
            .into_iter()
            .zip(cat_levels.into_iter().zip(cat_codes))
            .map(|(name, (levels, codes))| CategoricalColumn { name, levels, codes })
            .collect(),
        dichotomous: bin_names
            .into_iter()
            .zip(bin)
            .map(|(name, values)| BinaryColumn { name, values })
            .collect(),
        fixed_only: fixed_names
            .into_iter()
            .zip(fixed)
            .map(|(name, values)| NumericColumn { name, values })
            .collect(),
        domain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    ResponseNotBinary,
    BinaryOutOfDomain,
    CategoryOutOfRange,
    EmptyGroup,
    GroupOutOfRange,
    MissingValue,
    LengthMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub row: Option<usize>,
    pub column: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.row, &self.column) {
            (Some(r), Some(c)) => write!(f, "row {r}, column `{c}`: {}", self.message),
            (None, Some(c)) => write!(f, "column `{c}`: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

/// Checks every dataset invariant; returns one violation per breach.
pub fn validate(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = ds.n_obs();
    let v = |kind, row: Option<usize>, column: Option<&str>, message: String| Violation {
        kind,
        row,
        column: column.map(str::to_string),
        message,
    };

    let mut lens: Vec<(&str, usize)> = vec![(&ds.response_name, ds.y.len())];
    lens.extend(ds.continuous.iter().map(|c| (c.name.as_str(), c.values.len())));
    lens.extend(ds.categorical.iter().map(|c| (c.name.as_str(), c.codes.len())));
    lens.extend(ds.dichotomous.iter().map(|c| (c.name.as_str(), c.values.len())));
    lens.extend(ds.fixed_only.iter().map(|c| (c.name.as_str(), c.values.len())));
    let mut ragged = false;
    for (name, len) in lens {
        if len != n {
            ragged = true;
            out.push(v(
                ViolationKind::LengthMismatch,
                None,
                Some(name),
                format!("column has {len} rows, expected {n}"),
            ));
        }
    }
    if ragged {
        return out;
    }

    for (i, &yi) in ds.y.iter().enumerate() {
        if yi > 1 {
            out.push(v(
                ViolationKind::ResponseNotBinary,
                Some(i + 1),
                Some(&ds.response_name),
                format!("response not binary: {yi}"),
            ));
        }
    }
    for c in &ds.dichotomous {
        for (i, &d) in c.values.iter().enumerate() {
            if !ds.domain.contains(d) {
                out.push(v(
                    ViolationKind::BinaryOutOfDomain,
                    Some(i + 1),
                    Some(&c.name),
                    format!("value {d} outside the {} domain", ds.domain.label()),
                ));
            }
        }
    }
    for c in &ds.categorical {
        for (i, &code) in c.codes.iter().enumerate() {
            if code >= c.levels.len() {
                out.push(v(
                    ViolationKind::CategoryOutOfRange,
                    Some(i + 1),
                    Some(&c.name),
                    format!("category code {} outside 1..{}", code + 1, c.levels.len()),
                ));
            }
        }
    }
    for c in ds.continuous.iter().chain(&ds.fixed_only) {
        for (i, x) in c.values.iter().enumerate() {
            if !x.is_finite() {
                out.push(v(
                    ViolationKind::MissingValue,
                    Some(i + 1),
                    Some(&c.name),
                    "missing or non-finite value".into(),
                ));
            }
        }
    }
    let mut counts = vec![0usize; ds.n_groups()];
    for (i, &g) in ds.groups.iter().enumerate() {
        match counts.get_mut(g) {
            Some(c) => *c += 1,
            None => out.push(v(
                ViolationKind::GroupOutOfRange,
                Some(i + 1),
                Some(&ds.group_name),
                format!("group code {g} has no label"),
            )),
        }
    }
    for (g, &c) in counts.iter().enumerate() {
        if c == 0 {
            out.push(v(
                ViolationKind::EmptyGroup,
                None,
                Some(&ds.group_name),
                format!("empty group `{}`", ds.group_labels[g]),
            ));
        }
    }
    out
}

/// Fixed-effect design matrix with column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
}

impl Design {
    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }
}

pub const INTERCEPT: &str = "1";

/// Expands formula terms into design columns: `1` is the intercept, numeric
/// and dichotomous columns enter as-is, and a categorical column with `k`
/// levels enters as `k - 1` indicators against its first level.
pub fn build_design(ds: &Dataset, formula: &[String]) -> Result<Design> {
    let n = ds.n_obs();
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for term in formula {
        if term == INTERCEPT {
            names.push("(intercept)".to_string());
            cols.push(vec![1.0; n]);
        } else if let Some(c) = ds
            .continuous
            .iter()
            .chain(&ds.fixed_only)
            .find(|c| &c.name == term)
        {
            names.push(c.name.clone());
            cols.push(c.values.clone());
        } else if let Some(c) = ds.dichotomous.iter().find(|c| &c.name == term) {
            names.push(c.name.clone());
            cols.push(c.values.iter().map(|&d| d as f64).collect());
        } else if let Some(c) = ds.categorical.iter().find(|c| &c.name == term) {
            for level in 1..c.n_levels() {
                names.push(format!("{}:{}", c.name, c.levels[level]));
                cols.push(
                    c.codes
                        .iter()
                        .map(|&code| if code == level { 1.0 } else { 0.0 })
                        .collect(),
                );
            }
        } else {
            return Err(Error::Config(format!(
                "formula term `{term}` is not a usable column"
            )));
        }
    }
    let m = cols.len();
    let x = DMatrix::from_fn(n, m, |i, k| cols[k][i]);
    Ok(Design { names, x })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RoleManifest {
        RoleManifest::new([
            ("y", Role::Response),
            ("hosp", Role::Group),
            ("age", Role::Continuous),
        ])
    }

    #[test]
    fn minimal_manifest_loads() {
        let csv = "y,hosp,age,junk\n1,a,70.5,x\n0,a,61,x\n0,b,80,x\n1,b,77,x\n0,c,50,x\n1,c,66,x\n";
        let ds = read_dataset(csv.as_bytes(), &manifest(), None).unwrap();
        assert_eq!(ds.n_obs(), 6);
        assert_eq!(ds.n_continuous(), 1);
        assert_eq!(ds.categorical.len(), 0);
        assert_eq!(ds.n_binary(), 0);
        assert_eq!(ds.groups, vec![0, 0, 1, 1, 2, 2]);
        assert!(validate(&ds).is_empty());
    }

    #[test]
    fn empty_cell_is_named() {
        let csv = "y,hosp,age\n1,a,70\n0,a,\n";
        let err = read_dataset(csv.as_bytes(), &manifest(), None).unwrap_err();
        match err {
            Error::Cell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "age");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_manifest_column() {
        let csv = "y,hosp\n1,a\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &manifest(), None),
            Err(Error::MissingColumn(c)) if c == "age"
        ));
    }

    #[test]
    fn non_binary_response_rejected() {
        let csv = "y,hosp,age\n2,a,70\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &manifest(), None),
            Err(Error::Cell { row: 1, .. })
        ));
    }

    #[test]
    fn dichotomous_domain_checked() {
        let m = RoleManifest::new([
            ("y", Role::Response),
            ("g", Role::Group),
            ("d", Role::Dichotomous),
        ]);
        let csv = "y,g,d\n1,a,1\n0,a,-1\n";
        assert!(read_dataset(csv.as_bytes(), &m, None).is_err());
        let m = m.with_domain(Domain::PlusMinusOne);
        let ds = read_dataset(csv.as_bytes(), &m, None).unwrap();
        assert_eq!(ds.dichotomous[0].values, vec![1, -1]);
    }

    #[test]
    fn categorical_first_appearance_and_pinned_levels() {
        let m = RoleManifest::new([
            ("y", Role::Response),
            ("g", Role::Group),
            ("c", Role::Categorical),
        ]);
        let csv = "y,g,c\n1,a,hi\n0,a,lo\n0,b,hi\n1,b,mid\n";
        let ds = read_dataset(csv.as_bytes(), &m, None).unwrap();
        assert_eq!(ds.categorical[0].levels, vec!["hi", "lo", "mid"]);
        assert_eq!(ds.categorical[0].codes, vec![0, 1, 0, 2]);

        let pinned = m.with_levels("c", vec!["lo".into(), "mid".into()]);
        match read_dataset(csv.as_bytes(), &pinned, None) {
            Err(Error::UnknownLevel { level, known, .. }) => {
                assert_eq!(level, "hi");
                assert_eq!(known, vec!["lo", "mid"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_reports_breaches() {
        let csv = "y,hosp,age\n1,a,70\n0,a,61\n0,b,80\n";
        let mut ds = read_dataset(csv.as_bytes(), &manifest(), None).unwrap();
        ds.y[0] = 2;
        let v = validate(&ds);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::ResponseNotBinary);
        assert!(v[0].message.contains("response not binary"));

        // Dropping group b's only row leaves it empty.
        let mut ds = read_dataset(csv.as_bytes(), &manifest(), None).unwrap();
        let keep: Vec<usize> = (0..ds.n_obs()).filter(|&i| ds.groups[i] != 1).collect();
        ds = ds.subset(&keep);
        let empty: Vec<_> = validate(&ds)
            .into_iter()
            .filter(|v| v.kind == ViolationKind::EmptyGroup)
            .collect();
        let direct = (0..ds.n_groups())
            .filter(|g| !ds.groups.contains(g))
            .count();
        assert_eq!(empty.len(), direct);
        assert_eq!(empty.len(), 1);
        assert!(empty[0].message.contains("empty group"));
    }

    #[test]
    fn design_dummy_codes_categoricals() {
        let m = RoleManifest::new([
            ("y", Role::Response),
            ("g", Role::Group),
            ("x", Role::Continuous),
            ("c", Role::Categorical),
            ("d", Role::Dichotomous),
        ]);
        let csv = "y,g,x,c,d\n1,a,0.5,p,1\n0,a,1.5,q,0\n0,b,2.5,r,1\n";
        let ds = read_dataset(csv.as_bytes(), &m, None).unwrap();
        let terms: Vec<String> = ["1", "x", "c", "d"].iter().map(|s| s.to_string()).collect();
        let d = build_design(&ds, &terms).unwrap();
        assert_eq!(d.names, vec!["(intercept)", "x", "c:q", "c:r", "d"]);
        assert_eq!(d.row(1), vec![1.0, 1.5, 1.0, 0.0, 0.0]);
        assert!(build_design(&ds, &["nope".to_string()]).is_err());
    }
}

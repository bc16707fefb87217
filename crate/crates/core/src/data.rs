//! Grouped ordinal datasets and CSV ingestion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OmerfError, Result};

/// Column roles for CSV ingestion. The random-intercept column of `z` is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub label: String,
    pub group: String,
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub random_slopes: Vec<String>,
    /// Declared levels of categorical fixed covariates. The first level is the
    /// reference; every other level becomes a 0/1 column named `col=level`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categorical: BTreeMap<String, Vec<String>>,
    /// Number of ordinal categories; inferred from the largest label when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<u32>,
    /// Drop rows with missing values instead of rejecting the file.
    #[serde(default)]
    pub drop_missing: bool,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OmerfError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| OmerfError::Schema(format!("{}: {e}", path.display())))
    }

    /// Names of the columns of the fixed design matrix after one-hot expansion.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for col in &self.fixed {
            match self.categorical.get(col) {
                Some(levels) => {
                    names.extend(levels.iter().skip(1).map(|l| format!("{col}={l}")))
                }
                None => names.push(col.clone()),
            }
        }
        names
    }

    pub fn random_names(&self) -> Vec<String> {
        std::iter::once("(Intercept)".to_string())
            .chain(self.random_slopes.iter().cloned())
            .collect()
    }
}

/// Observations with fixed covariates `x` (J x P), random-effect covariates
/// `z` (J x (Q+1), first column constant 1), a group per row and an ordinal
/// label in `1..=C`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedOrdinalDataset {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    group: Vec<usize>,
    y: Vec<u32>,
    n_categories: u32,
    feature_names: Vec<String>,
    random_names: Vec<String>,
    group_labels: Vec<String>,
    group_rows: Vec<Vec<usize>>,
}

impl GroupedOrdinalDataset {
    /// `group` holds 0-based indices into `group_labels`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        group: Vec<usize>,
        y: Vec<u32>,
        n_categories: u32,
        feature_names: Vec<String>,
        random_names: Vec<String>,
        group_labels: Vec<String>,
    ) -> Result<Self> {
        let j = y.len();
        if x.nrows() != j || z.nrows() != j || group.len() != j {
            return Err(OmerfError::dim(format!(
                "x has {} rows, z {}, group {}, y {}",
                x.nrows(),
                z.nrows(),
                group.len(),
                j
            )));
        }
        if feature_names.len() != x.ncols() {
            return Err(OmerfError::dim("feature_names length differs from x columns"));
        }
        if random_names.len() != z.ncols() || z.ncols() == 0 {
            return Err(OmerfError::dim("random_names length differs from z columns"));
        }
        if n_categories < 2 {
            return Err(OmerfError::validation("need C >= 2 categories"));
        }
        if z.column(0).iter().any(|v| *v != 1.0) {
            return Err(OmerfError::validation("first column of z must be the constant 1"));
        }
        if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(OmerfError::validation("covariates must be finite"));
        }
        if let Some(bad) = y.iter().find(|&&v| v < 1 || v > n_categories) {
            return Err(OmerfError::validation(format!(
                "label outside 1..C (got {bad}, C = {n_categories})"
            )));
        }
        let n_groups = group_labels.len();
        let mut group_rows = vec![Vec::new(); n_groups];
        for (row, &g) in group.iter().enumerate() {
            if g >= n_groups {
                return Err(OmerfError::validation(format!(
                    "row {row}: group index {g} out of range (I = {n_groups})"
                )));
            }
            group_rows[g].push(row);
        }
        if let Some(g) = group_rows.iter().position(Vec::is_empty) {
            return Err(OmerfError::validation(format!(
                "group '{}' has no rows",
                group_labels[g]
            )));
        }
        Ok(GroupedOrdinalDataset {
            x,
            z,
            group,
            y,
            n_categories,
            feature_names,
            random_names,
            group_labels,
            group_rows,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn group(&self) -> &[usize] {
        &self.group
    }
    pub fn y(&self) -> &[u32] {
        &self.y
    }
    pub fn n_categories(&self) -> u32 {
        self.n_categories
    }
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }
    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }
    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }
    /// Q + 1.
    pub fn n_random(&self) -> usize {
        self.z.ncols()
    }
    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }
    pub fn random_names(&self) -> &[String] {
        &self.random_names
    }
    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }
    /// Row indices of each group, in row order.
    pub fn group_rows(&self) -> &[Vec<usize>] {
        &self.group_rows
    }

    /// Group label of every row.
    pub fn row_group_labels(&self) -> Vec<String> {
        self.group
            .iter()
            .map(|&g| self.group_labels[g].clone())
            .collect()
    }

    /// Number of distinct labels actually present.
    pub fn observed_categories(&self) -> usize {
        self.y.iter().collect::<BTreeSet<_>>().len()
    }

    /// Rows `rows` as a new dataset. Groups absent from the subset are dropped
    /// and the rest re-indexed, keeping lexicographic label order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let present: BTreeSet<usize> = rows.iter().map(|&r| self.group[r]).collect();
        let remap: HashMap<usize, usize> = present
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new))
            .collect();
        let x = self.x.select_rows(rows);
        let z = self.z.select_rows(rows);
        GroupedOrdinalDataset::new(
            x,
            z,
            rows.iter().map(|&r| remap[&self.group[r]]).collect(),
            rows.iter().map(|&r| self.y[r]).collect(),
            self.n_categories,
            self.feature_names.clone(),
            self.random_names.clone(),
            present.iter().map(|&g| self.group_labels[g].clone()).collect(),
        )
    }

    /// Same rows, with fixed covariates replaced (used by explain-style tools).
    pub fn with_x(&self, x: DMatrix<f64>, feature_names: Vec<String>) -> Result<Self> {
        GroupedOrdinalDataset::new(
            x,
            self.z.clone(),
            self.group.clone(),
            self.y.clone(),
            self.n_categories,
            feature_names,
            self.random_names.clone(),
            self.group_labels.clone(),
        )
    }

    pub fn design(&self) -> Design {
        Design {
            x: self.x.clone(),
            z: self.z.clone(),
            group_labels: self.row_group_labels(),
            y: Some(self.y.clone()),
        }
    }

    /// Write as CSV with columns `group, y, <features...>`. Random-slope columns
    /// are expected to be among the features.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["group".to_string(), "y".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![
                self.group_labels[self.group[r]].clone(),
                self.y[r].to_string(),
            ];
            rec.extend(self.x.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| OmerfError::io(path, e))?;
        Ok(())
    }
}

fn csv_io(path: &Path, e: csv::Error) -> OmerfError {
    if !e.is_io_error() {
        return OmerfError::Csv(e);
    }
    match e.into_kind() {
        csv::ErrorKind::Io(io) => OmerfError::io(path, io),
        _ => unreachable!("is_io_error checked"),
    }
}

/// Design rows for prediction: labels are optional and groups are kept as
/// raw labels so unseen groups can be recognised.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub group_labels: Vec<String>,
    pub y: Option<Vec<u32>>,
}

impl Design {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "NaN" | "nan" | "null" | "NULL")
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|e| OmerfError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_io(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        // data rows are numbered from 1 after the header
        rows.push((i + 1, rec));
    }
    Ok(RawTable { header, rows })
}

fn column_index(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| OmerfError::Schema(format!("column '{name}' not found in header")))
}

fn parse_f64(row: usize, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| OmerfError::Parse {
        row,
        column: column.to_string(),
        message: format!("'{raw}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(OmerfError::Parse {
            row,
            column: column.to_string(),
            message: format!("'{raw}' is not finite"),
        });
    }
    Ok(v)
}

fn load_impl(path: &Path, schema: &Schema, require_label: bool) -> Result<(Design, Vec<String>)> {
    let table = read_table(path)?;
    let label_idx = match column_index(&table.header, &schema.label) {
        Ok(i) => Some(i),
        Err(e) if require_label => return Err(e),
        Err(_) => None,
    };
    let group_idx = column_index(&table.header, &schema.group)?;
    let fixed_idx: Vec<usize> = schema
        .fixed
        .iter()
        .map(|c| column_index(&table.header, c))
        .collect::<Result<_>>()?;
    let slope_idx: Vec<usize> = schema
        .random_slopes
        .iter()
        .map(|c| {
            if schema.categorical.contains_key(c) {
                return Err(OmerfError::Schema(format!(
                    "random slope '{c}' must be numeric"
                )));
            }
            column_index(&table.header, c)
        })
        .collect::<Result<_>>()?;
    for name in schema.categorical.keys() {
        if !schema.fixed.contains(name) {
            return Err(OmerfError::Schema(format!(
                "categorical column '{name}' is not a fixed covariate"
            )));
        }
        if schema.categorical[name].is_empty() {
            return Err(OmerfError::Schema(format!("categorical column '{name}' declares no levels")));
        }
    }

    let feature_names = schema.feature_names();
    let p = feature_names.len();
    let q1 = 1 + slope_idx.len();
    let mut xs: Vec<f64> = Vec::new();
    let mut zs: Vec<f64> = Vec::new();
    let mut groups = Vec::new();
    let mut labels = Vec::new();

    'rows: for (row, rec) in &table.rows {
        let used = fixed_idx
            .iter()
            .chain(&slope_idx)
            .chain(std::iter::once(&group_idx))
            .chain(label_idx.iter());
        for &c in used {
            let missing = rec.get(c).map(is_missing).unwrap_or(true);
            if missing {
                if schema.drop_missing {
                    continue 'rows;
                }
                return Err(OmerfError::Parse {
                    row: *row,
                    column: table.header[c].clone(),
                    message: "missing value".into(),
                });
            }
        }
        let mut xrow = Vec::with_capacity(p);
        for (name, &c) in schema.fixed.iter().zip(&fixed_idx) {
            let raw = rec.get(c).unwrap_or("").trim();
            match schema.categorical.get(name) {
                Some(levels) => {
                    let Some(pos) = levels.iter().position(|l| l == raw) else {
                        return Err(OmerfError::Parse {
                            row: *row,
                            column: name.clone(),
                            message: format!("level '{raw}' not declared in schema"),
                        });
                    };
                    xrow.extend((1..levels.len()).map(|k| if k == pos { 1.0 } else { 0.0 }));
                }
                None => xrow.push(parse_f64(*row, name, raw)?),
            }
        }
        let mut zrow = vec![1.0];
        for (name, &c) in schema.random_slopes.iter().zip(&slope_idx) {
            zrow.push(parse_f64(*row, name, rec.get(c).unwrap_or(""))?);
        }
        if let Some(li) = label_idx {
            let raw = rec.get(li).unwrap_or("").trim();
            let v: i64 = raw.parse().map_err(|_| OmerfError::Parse {
                row: *row,
                column: schema.label.clone(),
                message: format!("'{raw}' is not an integer label"),
            })?;
            if v < 1 || schema.categories.is_some_and(|c| v > c as i64) {
                return Err(OmerfError::validation(format!(
                    "row {row}: label outside 1..C (got {v})"
                )));
            }
            labels.push(v as u32);
        }
        xs.extend(xrow);
        zs.extend(zrow);
        groups.push(rec.get(group_idx).unwrap_or("").trim().to_string());
    }
    let j = groups.len();
    let design = Design {
        x: DMatrix::from_row_slice(j, p, &xs),
        z: DMatrix::from_row_slice(j, q1, &zs),
        group_labels: groups,
        y: label_idx.map(|_| labels),
    };
    Ok((design, feature_names))
}

/// Load and validate a dataset. Group labels map to dense indices in
/// lexicographic order of the label strings.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<GroupedOrdinalDataset> {
    let (design, feature_names) = load_impl(path, schema, true)?;
    if design.n_rows() == 0 {
        return Err(OmerfError::validation("dataset has no rows"));
    }
    let y = design.y.expect("label column required");
    let n_categories = match schema.categories {
        Some(c) => c,
        None => y.iter().copied().max().unwrap_or(0).max(2),
    };
    let uniq: BTreeSet<&String> = design.group_labels.iter().collect();
    let index: HashMap<&String, usize> = uniq.iter().enumerate().map(|(i, g)| (*g, i)).collect();
    let group = design.group_labels.iter().map(|g| index[g]).collect();
    GroupedOrdinalDataset::new(
        design.x,
        design.z,
        group,
        y,
        n_categories,
        feature_names,
        schema.random_names(),
        uniq.into_iter().cloned().collect(),
    )
}

/// Load prediction rows; the label column is used when present.
pub fn load_design(path: &Path, schema: &Schema) -> Result<Design> {
    Ok(load_impl(path, schema, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn schema() -> Schema {
        Schema {
            label: "y".into(),
            group: "g".into(),
            fixed: vec!["a".into()],
            random_slopes: vec![],
            categorical: BTreeMap::new(),
            categories: None,
            drop_missing: false,
        }
    }

    #[test]
    fn loads_small_file() {
        let f = write("g,y,a\nB,1,0.5\nA,2,1.5\nB,3,2\nA,1,-1\n");
        let d = load_dataset(f.path(), &schema()).unwrap();
        assert_eq!(d.n_rows(), 4);
        assert_eq!(d.n_groups(), 2);
        assert_eq!(d.n_categories(), 3);
        assert_eq!(d.group_labels(), &["A".to_string(), "B".to_string()]);
        assert_eq!(d.group(), &[1, 0, 1, 0]);
        assert_eq!(d.z().column(0).iter().copied().collect::<Vec<_>>(), vec![1.0; 4]);
    }

    #[test]
    fn rejects_label_zero() {
        let f = write("g,y,a\nA,0,0.5\nB,2,1\n");
        let err = load_dataset(f.path(), &schema()).unwrap_err();
        assert!(err.to_string().contains("label outside 1..C"), "{err}");
    }

    #[test]
    fn parse_error_has_location() {
        let f = write("g,y,a\nA,1,0.5\nB,2,oops\n");
        match load_dataset(f.path(), &schema()).unwrap_err() {
            OmerfError::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_values_rejected_or_dropped() {
        let f = write("g,y,a\nA,1,NA\nB,2,1\nA,2,3\n");
        assert!(matches!(
            load_dataset(f.path(), &schema()),
            Err(OmerfError::Parse { .. })
        ));
        let mut s = schema();
        s.drop_missing = true;
        let d = load_dataset(f.path(), &s).unwrap();
        assert_eq!(d.n_rows(), 2);
    }

    #[test]
    fn schema_mismatch() {
        let f = write("g,y,b\nA,1,0.5\n");
        assert!(matches!(
            load_dataset(f.path(), &schema()),
            Err(OmerfError::Schema(_))
        ));
    }

    #[test]
    fn categorical_one_hot_and_slopes() {
        let f = write("g,y,a,color\nA,1,0.5,red\nB,2,1,blue\nA,3,2,green\n");
        let mut s = schema();
        s.fixed.push("color".into());
        s.categorical
            .insert("color".into(), vec!["red".into(), "green".into(), "blue".into()]);
        s.random_slopes.push("a".into());
        let d = load_dataset(f.path(), &s).unwrap();
        assert_eq!(d.feature_names(), &["a", "color=green", "color=blue"]);
        assert_eq!(d.x().row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 1.0]);
        assert_eq!(d.z().row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0]);
    }

    #[test]
    fn subset_reindexes_groups() {
        let f = write("g,y,a\nB,1,0.5\nA,2,1.5\nC,3,2\nA,1,-1\n");
        let d = load_dataset(f.path(), &schema()).unwrap();
        let s = d.subset(&[0, 2]).unwrap();
        assert_eq!(s.group_labels(), &["B".to_string(), "C".to_string()]);
        assert_eq!(s.group(), &[0, 1]);
    }

    #[test]
    fn design_without_label() {
        let f = write("g,a\nA,0.5\nZ,1\n");
        let d = load_design(f.path(), &schema()).unwrap();
        assert!(d.y.is_none());
        assert_eq!(d.group_labels, vec!["A", "Z"]);
    }
}

//! Block-structured feature tables: ingestion, fusion by concatenation,
//! z-scoring, and correlation-threshold column selection.
//!
//! A table carries named columns grouped into blocks ("radiomics",
//! "indications", ...). Fusing concatenates blocks column-wise after
//! aligning rows by sample id. Selection is a greedy forward pass that
//! keeps a column only when its absolute Pearson correlation with every
//! already-kept column stays strictly below the threshold.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("failed to read feature file")]
    Io(#[from] std::io::Error),
    #[error("malformed CSV")]
    Csv(#[from] csv::Error),
    #[error("first column of a feature CSV must be `sample_id`, found `{0}`")]
    MissingSampleId(String),
    #[error("non-numeric cell at row {row}, column `{column}`: `{value}`")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("non-finite value at row {row}, column `{column}`")]
    NonFinite { row: usize, column: String },
    #[error("duplicate sample_id `{sample_id}` at row {row}")]
    DuplicateSample { row: usize, sample_id: String },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("no data rows")]
    Empty,
    #[error("tables do not share a sample_id set (e.g. `{example}`)")]
    SampleMismatch { example: String },
    #[error("cannot fuse an empty list of tables")]
    NothingToFuse,
    #[error("column mismatch: expected `{expected}`, found `{found}`")]
    ColumnMismatch { expected: String, found: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("row subset is empty")]
    EmptySubset,
    #[error("row subset of size {0} is too small to compute correlations (need >= 3)")]
    SubsetTooSmall(usize),
    #[error("row index {index} out of bounds for table with {rows} rows")]
    RowOutOfBounds { index: usize, rows: usize },
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
}

/// Identity of one feature column: the block it came from plus its name
/// inside that block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub block: String,
    pub name: String,
}

impl FeatureColumn {
    pub fn new(block: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            block: block.into(),
            name: name.into(),
        }
    }

    /// Globally unique name, `block.name`. Artifacts (selection masks,
    /// model coefficients) refer to columns by this string.
    pub fn qualified(&self) -> String {
        format!("{}.{}", self.block, self.name)
    }
}

/// Dense feature matrix with row and column identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    sample_ids: Vec<String>,
    columns: Vec<FeatureColumn>,
    values: Array2<f64>,
}

impl FeatureTable {
    /// Build a table, checking shape agreement, finiteness, and uniqueness
    /// of sample ids and qualified column names.
    pub fn new(
        sample_ids: Vec<String>,
        columns: Vec<FeatureColumn>,
        values: Array2<f64>,
    ) -> Result<Self, FeatureError> {
        assert_eq!(
            values.nrows(),
            sample_ids.len(),
            "row count must match sample_id count"
        );
        assert_eq!(
            values.ncols(),
            columns.len(),
            "column count must match column name count"
        );
        let mut seen = HashSet::new();
        for (i, s) in sample_ids.iter().enumerate() {
            if !seen.insert(s.clone()) {
                return Err(FeatureError::DuplicateSample {
                    row: i + 1,
                    sample_id: s.clone(),
                });
            }
        }
        let mut seen_cols = HashSet::new();
        for c in &columns {
            if !seen_cols.insert(c.qualified()) {
                return Err(FeatureError::DuplicateColumn(c.qualified()));
            }
        }
        for ((r, c), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(FeatureError::NonFinite {
                    row: r + 1,
                    column: columns[c].qualified(),
                });
            }
        }
        Ok(Self {
            sample_ids,
            columns,
            values,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn qualified_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.qualified()).collect()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, qualified: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.qualified() == qualified)
    }

    /// New table with the rows at `indices`, in that order.
    pub fn take_rows(&self, indices: &[usize]) -> Result<FeatureTable, FeatureError> {
        for &i in indices {
            if i >= self.n_rows() {
                return Err(FeatureError::RowOutOfBounds {
                    index: i,
                    rows: self.n_rows(),
                });
            }
        }
        let sample_ids = indices
            .iter()
            .map(|&i| self.sample_ids[i].clone())
            .collect();
        let values = self.values.select(Axis(0), indices);
        FeatureTable::new(sample_ids, self.columns.clone(), values)
    }

    /// New table with only the named columns, in the given order.
    pub fn select_columns(&self, qualified: &[String]) -> Result<FeatureTable, FeatureError> {
        let mut indices = Vec::with_capacity(qualified.len());
        for q in qualified {
            match self.column_index(q) {
                Some(i) => indices.push(i),
                None => return Err(FeatureError::UnknownColumn(q.clone())),
            }
        }
        let columns = indices.iter().map(|&i| self.columns[i].clone()).collect();
        let values = self.values.select(Axis(1), &indices);
        FeatureTable::new(self.sample_ids.clone(), columns, values)
    }

    /// New table with only the columns of `block`, preserving order.
    pub fn block(&self, block: &str) -> Result<FeatureTable, FeatureError> {
        let names: Vec<String> = self
            .columns
            .iter()
            .filter(|c| c.block == block)
            .map(|c| c.qualified())
            .collect();
        if names.is_empty() {
            return Err(FeatureError::UnknownColumn(format!("{block}.*")));
        }
        self.select_columns(&names)
    }

    /// Reorder rows to match `sample_ids` exactly.
    pub fn align_to(&self, sample_ids: &[String]) -> Result<FeatureTable, FeatureError> {
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(sample_ids.len());
        for s in sample_ids {
            match index.get(s.as_str()) {
                Some(&i) => rows.push(i),
                None => return Err(FeatureError::SampleMismatch { example: s.clone() }),
            }
        }
        self.take_rows(&rows)
    }
}

/// Per-column z-scoring parameters fit on a training subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub columns: Vec<FeatureColumn>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns whose subset standard deviation was exactly zero; their
    /// `std` entry is substituted with 1.0 so scaling stays well defined.
    pub constant: Vec<bool>,
}

/// Correlation-threshold selection result.
///
/// `retained` holds qualified column names in original table order; every
/// retained pair had absolute Pearson correlation strictly below
/// `threshold` on the fitting rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub threshold: f64,
    pub retained: Vec<String>,
}

/// Load one feature block from CSV. The first header cell must be
/// `sample_id`; every other column is numeric and becomes a feature named
/// by its header under `block_name`.
pub fn load_feature_table(
    path: impl AsRef<Path>,
    block_name: &str,
) -> Result<FeatureTable, FeatureError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let mut iter = headers.iter();
    match iter.next() {
        Some("sample_id") => {}
        Some(other) => return Err(FeatureError::MissingSampleId(other.to_string())),
        None => return Err(FeatureError::Empty),
    }
    let columns: Vec<FeatureColumn> = iter
        .map(|name| FeatureColumn::new(block_name, name))
        .collect();

    let mut sample_ids = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let sample_id = row.get(0).unwrap_or("").to_string();
        if !seen.insert(sample_id.clone()) {
            return Err(FeatureError::DuplicateSample {
                row: row_no,
                sample_id,
            });
        }
        sample_ids.push(sample_id);
        for (c, col) in columns.iter().enumerate() {
            let cell = row.get(c + 1).unwrap_or("");
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| FeatureError::NonNumericCell {
                    row: row_no,
                    column: col.qualified(),
                    value: cell.to_string(),
                })?;
            if !v.is_finite() {
                return Err(FeatureError::NonFinite {
                    row: row_no,
                    column: col.qualified(),
                });
            }
            data.push(v);
        }
    }
    if sample_ids.is_empty() {
        return Err(FeatureError::Empty);
    }
    let values = Array2::from_shape_vec((sample_ids.len(), columns.len()), data)
        .expect("row-major buffer matches parsed shape");
    FeatureTable::new(sample_ids, columns, values)
}

/// Concatenate tables column-wise. All tables must hold the same sample_id
/// set; rows follow the first table's order and the other tables are
/// realigned to it.
pub fn fuse_concat(tables: &[&FeatureTable]) -> Result<FeatureTable, FeatureError> {
    let first = *tables.first().ok_or(FeatureError::NothingToFuse)?;
    let id_set: HashSet<&str> = first.sample_ids.iter().map(String::as_str).collect();
    for t in &tables[1..] {
        if t.n_rows() != first.n_rows() {
            let example = t
                .sample_ids
                .iter()
                .find(|s| !id_set.contains(s.as_str()))
                .cloned()
                .unwrap_or_else(|| first.sample_ids[0].clone());
            return Err(FeatureError::SampleMismatch { example });
        }
        if let Some(missing) = t.sample_ids.iter().find(|s| !id_set.contains(s.as_str())) {
            return Err(FeatureError::SampleMismatch {
                example: missing.clone(),
            });
        }
    }

    let mut columns = Vec::new();
    let mut parts = Vec::with_capacity(tables.len());
    let mut aligned_storage = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        columns.extend(t.columns.iter().cloned());
        if i == 0 {
            parts.push(&first.values);
        } else {
            aligned_storage.push(t.align_to(&first.sample_ids)?);
        }
    }
    for a in &aligned_storage {
        parts.push(&a.values);
    }

    let n = first.n_rows();
    let width: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut values = Array2::zeros((n, width));
    let mut offset = 0;
    for p in parts {
        values
            .slice_mut(ndarray::s![.., offset..offset + p.ncols()])
            .assign(p);
        offset += p.ncols();
    }
    FeatureTable::new(first.sample_ids.clone(), columns, values)
}

/// Estimate per-column mean and population (1/N) standard deviation over
/// the rows at `rows`. Columns constant on the subset are flagged and get
/// std 1.0.
pub fn fit_standardizer(
    table: &FeatureTable,
    rows: &[usize],
) -> Result<StandardizationParams, FeatureError> {
    if rows.is_empty() {
        return Err(FeatureError::EmptySubset);
    }
    for &r in rows {
        if r >= table.n_rows() {
            return Err(FeatureError::RowOutOfBounds {
                index: r,
                rows: table.n_rows(),
            });
        }
    }
    let n = rows.len() as f64;
    let mut mean = Vec::with_capacity(table.n_cols());
    let mut std = Vec::with_capacity(table.n_cols());
    let mut constant = Vec::with_capacity(table.n_cols());
    for c in 0..table.n_cols() {
        let mut sum = 0.0;
        for &r in rows {
            sum += table.values[(r, c)];
        }
        let m = sum / n;
        let mut ss = 0.0;
        for &r in rows {
            let d = table.values[(r, c)] - m;
            ss += d * d;
        }
        let var = ss / n;
        let s = var.sqrt();
        if s == 0.0 {
            mean.push(m);
            std.push(1.0);
            constant.push(true);
        } else {
            mean.push(m);
            std.push(s);
            constant.push(false);
        }
    }
    Ok(StandardizationParams {
        columns: table.columns.clone(),
        mean,
        std,
        constant,
    })
}

fn check_columns_match(
    table: &FeatureTable,
    params: &StandardizationParams,
) -> Result<(), FeatureError> {
    if table.columns.len() != params.columns.len() {
        return Err(FeatureError::ColumnMismatch {
            expected: format!("{} columns", params.columns.len()),
            found: format!("{} columns", table.columns.len()),
        });
    }
    for (a, b) in table.columns.iter().zip(&params.columns) {
        if a != b {
            return Err(FeatureError::ColumnMismatch {
                expected: b.qualified(),
                found: a.qualified(),
            });
        }
    }
    Ok(())
}

/// Apply z-scoring: x -> (x - mean) / std, column by column. Not
/// idempotent; applying twice re-centers already-scaled values.
pub fn apply_standardizer(
    table: &FeatureTable,
    params: &StandardizationParams,
) -> Result<FeatureTable, FeatureError> {
    check_columns_match(table, params)?;
    let mut values = table.values.clone();
    for c in 0..values.ncols() {
        let m = params.mean[c];
        let s = params.std[c];
        for v in values.column_mut(c) {
            *v = (*v - m) / s;
        }
    }
    FeatureTable::new(table.sample_ids.clone(), table.columns.clone(), values)
}

/// Undo [`apply_standardizer`]: x -> x * std + mean.
pub fn invert_standardizer(
    table: &FeatureTable,
    params: &StandardizationParams,
) -> Result<FeatureTable, FeatureError> {
    check_columns_match(table, params)?;
    let mut values = table.values.clone();
    for c in 0..values.ncols() {
        let m = params.mean[c];
        let s = params.std[c];
        for v in values.column_mut(c) {
            *v = *v * s + m;
        }
    }
    FeatureTable::new(table.sample_ids.clone(), table.columns.clone(), values)
}

/// Absolute Pearson correlation of two equal-length slices, population
/// convention. A constant input yields 0.0 so degenerate columns never
/// block selection.
pub fn pearson(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Greedy forward correlation filter over columns in table order.
///
/// The first column is always retained; each later column is retained iff
/// its absolute Pearson correlation with every already-retained column is
/// strictly below `threshold` on the fitting rows. A threshold of 1.0 or
/// more retains every column. No randomness: the result is a pure function
/// of (table, rows, threshold).
pub fn select_by_correlation(
    table: &FeatureTable,
    rows: &[usize],
    threshold: f64,
) -> Result<SelectionMask, FeatureError> {
    select_impl(table, rows, threshold, true)
}

/// Sequential variant of [`select_by_correlation`]; same result bit for
/// bit. Kept public as the benchmark baseline.
pub fn select_by_correlation_seq(
    table: &FeatureTable,
    rows: &[usize],
    threshold: f64,
) -> Result<SelectionMask, FeatureError> {
    select_impl(table, rows, threshold, false)
}

fn select_impl(
    table: &FeatureTable,
    rows: &[usize],
    threshold: f64,
    parallel: bool,
) -> Result<SelectionMask, FeatureError> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(FeatureError::BadThreshold(threshold));
    }
    for &r in rows {
        if r >= table.n_rows() {
            return Err(FeatureError::RowOutOfBounds {
                index: r,
                rows: table.n_rows(),
            });
        }
    }
    if threshold >= 1.0 {
        return Ok(SelectionMask {
            threshold,
            retained: table.qualified_names(),
        });
    }
    if rows.len() < 3 {
        return Err(FeatureError::SubsetTooSmall(rows.len()));
    }

    let sub = table.values.select(Axis(0), rows);
    let p = sub.ncols();
    let mut retained_idx: Vec<usize> = Vec::new();
    for j in 0..p {
        let candidate = sub.column(j);
        let ok = if retained_idx.is_empty() {
            true
        } else {
            let corrs = if parallel {
                parallel::map_indexed(retained_idx.len(), |k| {
                    pearson(candidate, sub.column(retained_idx[k])).abs()
                })
            } else {
                parallel::map_indexed_seq(retained_idx.len(), |k| {
                    pearson(candidate, sub.column(retained_idx[k])).abs()
                })
            };
            corrs.iter().all(|c| *c < threshold)
        };
        if ok {
            retained_idx.push(j);
        }
    }
    let retained = retained_idx
        .iter()
        .map(|&j| table.columns[j].qualified())
        .collect();
    Ok(SelectionMask {
        threshold,
        retained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use std::io::Write;

    fn table_from(values: Array2<f64>, block: &str) -> FeatureTable {
        let n = values.nrows();
        let p = values.ncols();
        let sample_ids = (0..n).map(|i| format!("s{i}")).collect();
        let columns = (0..p)
            .map(|j| FeatureColumn::new(block, format!("f{j}")))
            .collect();
        FeatureTable::new(sample_ids, columns, values).unwrap()
    }

    #[test]
    fn load_wide_csv() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let header: Vec<String> = std::iter::once("sample_id".to_string())
            .chain((0..107).map(|i| format!("r{i:03}")))
            .collect();
        writeln!(f, "{}", header.join(",")).unwrap();
        for r in 0..5 {
            let row: Vec<String> = std::iter::once(format!("s{r}"))
                .chain((0..107).map(|c| format!("{}", (r * 107 + c) as f64 * 0.5)))
                .collect();
            writeln!(f, "{}", row.join(",")).unwrap();
        }
        let t = load_feature_table(f.path(), "radiomics").unwrap();
        assert_eq!(t.n_cols(), 107);
        assert_eq!(t.n_rows(), 5);
        assert_eq!(t.columns()[0].qualified(), "radiomics.r000");
        assert_eq!(t.values()[(1, 2)], (107 + 2) as f64 * 0.5);
    }

    #[test]
    fn load_empty_file_fails() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "sample_id,a,b").unwrap();
        assert!(matches!(
            load_feature_table(f.path(), "x"),
            Err(FeatureError::Empty)
        ));
    }

    #[test]
    fn load_rejects_non_numeric_cell() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "sample_id,a,b").unwrap();
        writeln!(f, "s1,1.0,2.0").unwrap();
        writeln!(f, "s2,1.0,oops").unwrap();
        let err = load_feature_table(f.path(), "x").unwrap_err();
        match err {
            FeatureError::NonNumericCell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "x.b");
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn load_rejects_nan() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "sample_id,a").unwrap();
        writeln!(f, "s1,NaN").unwrap();
        assert!(matches!(
            load_feature_table(f.path(), "x"),
            Err(FeatureError::NonFinite { row: 1, .. })
        ));
    }

    #[test]
    fn load_rejects_duplicate_sample() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "sample_id,a").unwrap();
        writeln!(f, "s1,1.0").unwrap();
        writeln!(f, "s1,2.0").unwrap();
        assert!(matches!(
            load_feature_table(f.path(), "x"),
            Err(FeatureError::DuplicateSample { row: 2, .. })
        ));
    }

    #[test]
    fn fuse_widths_sum() {
        let n = 4usize;
        let a = table_from(Array2::from_elem((n, 384), 1.0), "indications");
        let b = table_from(Array2::from_elem((n, 384), 2.0), "pancreas");
        let c = table_from(Array2::from_elem((n, 107), 3.0), "radiomics");
        let fused = fuse_concat(&[&a, &b, &c]).unwrap();
        assert_eq!(fused.n_cols(), 875);
        assert_eq!(fused.values()[(0, 0)], 1.0);
        assert_eq!(fused.values()[(0, 384)], 2.0);
        assert_eq!(fused.values()[(0, 768)], 3.0);
        assert_eq!(fused.columns()[768].block, "radiomics");
    }

    #[test]
    fn fuse_single_table_is_identity() {
        let a = table_from(array![[1.0, 2.0], [3.0, 4.0]], "a");
        let fused = fuse_concat(&[&a]).unwrap();
        assert_eq!(fused, a);
    }

    #[test]
    fn fuse_disjoint_ids_fails() {
        let a = table_from(array![[1.0], [2.0]], "a");
        let b = FeatureTable::new(
            vec!["t0".into(), "t1".into()],
            vec![FeatureColumn::new("b", "f0")],
            array![[1.0], [2.0]],
        )
        .unwrap();
        assert!(matches!(
            fuse_concat(&[&a, &b]),
            Err(FeatureError::SampleMismatch { .. })
        ));
    }

    #[test]
    fn fuse_realigns_rows_to_first_table() {
        let a = table_from(array![[1.0], [2.0], [3.0]], "a");
        let b = FeatureTable::new(
            vec!["s2".into(), "s0".into(), "s1".into()],
            vec![FeatureColumn::new("b", "f0")],
            array![[30.0], [10.0], [20.0]],
        )
        .unwrap();
        let fused = fuse_concat(&[&a, &b]).unwrap();
        assert_eq!(fused.sample_ids(), a.sample_ids());
        assert_eq!(fused.values()[(0, 1)], 10.0);
        assert_eq!(fused.values()[(1, 1)], 20.0);
        assert_eq!(fused.values()[(2, 1)], 30.0);
    }

    #[test]
    fn fuse_is_associative() {
        let a = table_from(array![[1.0, 2.0], [3.0, 4.0]], "a");
        let b = table_from(array![[5.0], [6.0]], "b");
        let c = table_from(array![[7.0], [8.0]], "c");
        let left = fuse_concat(&[&fuse_concat(&[&a, &b]).unwrap(), &c]).unwrap();
        let flat = fuse_concat(&[&a, &b, &c]).unwrap();
        assert_eq!(left, flat);
    }

    #[test]
    fn standardizer_hand_case() {
        let t = table_from(array![[0.0], [2.0]], "x");
        let p = fit_standardizer(&t, &[0, 1]).unwrap();
        assert_eq!(p.mean[0], 1.0);
        assert_eq!(p.std[0], 1.0);
        assert!(!p.constant[0]);
    }

    #[test]
    fn standardizer_constant_column_flagged() {
        let t = table_from(Array2::from_elem((4, 1), 5.0), "x");
        let p = fit_standardizer(&t, &[0, 1, 2, 3]).unwrap();
        assert_eq!(p.mean[0], 5.0);
        assert_eq!(p.std[0], 1.0);
        assert!(p.constant[0]);
        let z = apply_standardizer(&t, &p).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn standardizer_is_deterministic() {
        let t = table_from(array![[0.5, -1.0], [2.5, 3.0], [9.0, 0.0]], "x");
        let p1 = fit_standardizer(&t, &[0, 1, 2]).unwrap();
        let p2 = fit_standardizer(&t, &[0, 1, 2]).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn standardizer_empty_subset_fails() {
        let t = table_from(array![[1.0]], "x");
        assert!(matches!(
            fit_standardizer(&t, &[]),
            Err(FeatureError::EmptySubset)
        ));
    }

    #[test]
    fn applied_training_rows_are_zero_mean_unit_std() {
        let mut values = Array2::zeros((50, 3));
        let mut state = 123u64;
        for v in values.iter_mut() {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            *v = (state >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 3.0;
        }
        let t = table_from(values, "x");
        let rows: Vec<usize> = (0..30).collect();
        let p = fit_standardizer(&t, &rows).unwrap();
        let z = apply_standardizer(&t, &p).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = rows.iter().map(|&r| z.values()[(r, c)]).collect();
            let m: f64 = col.iter().sum::<f64>() / col.len() as f64;
            let var: f64 = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-9, "column {c} mean {m}");
            assert!(
                (var.sqrt() - 1.0).abs() < 1e-9,
                "column {c} std {}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn apply_is_not_idempotent() {
        let t = table_from(array![[0.0], [2.0], [7.0]], "x");
        let p = fit_standardizer(&t, &[0, 1, 2]).unwrap();
        let once = apply_standardizer(&t, &p).unwrap();
        let twice = apply_standardizer(&once, &p).unwrap();
        assert_ne!(once, twice);
    }

    #[test]
    fn apply_rejects_column_mismatch() {
        let t = table_from(array![[0.0], [2.0]], "x");
        let other = table_from(array![[0.0], [2.0]], "y");
        let p = fit_standardizer(&other, &[0, 1]).unwrap();
        assert!(matches!(
            apply_standardizer(&t, &p),
            Err(FeatureError::ColumnMismatch { .. })
        ));
    }

    #[test]
    fn standardize_round_trip() {
        use proptest::prelude::*;
        let mut runner = proptest::test_runner::TestRunner::default();
        runner
            .run(&proptest::collection::vec(-1e3f64..1e3, 12..60), |flat| {
                let n = flat.len() / 3;
                let values = Array2::from_shape_vec((n, 3), flat[..n * 3].to_vec()).unwrap();
                let t = table_from(values, "x");
                let rows: Vec<usize> = (0..n).collect();
                let p = fit_standardizer(&t, &rows).unwrap();
                let z = apply_standardizer(&t, &p).unwrap();
                let back = invert_standardizer(&z, &p).unwrap();
                for (a, b) in t.values().iter().zip(back.values().iter()) {
                    let scale = a.abs().max(1.0);
                    prop_assert!((a - b).abs() / scale < 1e-12);
                }
                Ok(())
            })
            .unwrap();
    }

    #[test]
    fn identical_columns_collapse_to_one() {
        let col = array![[1.0], [4.0], [-2.0], [0.5]];
        let mut values = Array2::zeros((4, 107));
        for j in 0..107 {
            values.column_mut(j).assign(&col.column(0));
        }
        let t = table_from(values, "r");
        let mask = select_by_correlation(&t, &[0, 1, 2, 3], 0.5).unwrap();
        assert_eq!(mask.retained, vec!["r.f0".to_string()]);
    }

    #[test]
    fn orthogonal_columns_all_retained() {
        let values = array![
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let t = table_from(values, "r");
        let mask = select_by_correlation(&t, &[0, 1, 2, 3], 0.05).unwrap();
        assert_eq!(mask.retained.len(), 3);
    }

    #[test]
    fn threshold_at_or_above_one_retains_all() {
        let col = array![[1.0], [4.0], [-2.0]];
        let mut values = Array2::zeros((3, 5));
        for j in 0..5 {
            values.column_mut(j).assign(&col.column(0));
        }
        let t = table_from(values, "r");
        let mask = select_by_correlation(&t, &[0, 1, 2], 1.0).unwrap();
        assert_eq!(mask.retained.len(), 5);
    }

    #[test]
    fn constant_column_never_blocks() {
        let values = array![[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]];
        let t = table_from(values, "r");
        let mask = select_by_correlation(&t, &[0, 1, 2], 0.3).unwrap();
        assert_eq!(mask.retained.len(), 2);
    }

    #[test]
    fn small_subset_rejected() {
        let t = table_from(array![[1.0], [2.0]], "r");
        assert!(matches!(
            select_by_correlation(&t, &[0, 1], 0.5),
            Err(FeatureError::SubsetTooSmall(2))
        ));
    }

    #[test]
    fn retained_pairs_beat_threshold_and_drops_are_justified() {
        // Known structure: f1 tracks f0, f3 tracks f2, f4 is independent.
        let values = array![
            [1.0, 1.1, 5.0, 5.2, 0.3],
            [2.0, 2.1, 3.0, 3.1, -0.7],
            [3.0, 2.9, 8.0, 8.3, 0.9],
            [4.0, 4.2, 1.0, 0.8, -0.2],
            [5.0, 4.8, 6.0, 6.1, 0.4],
            [6.0, 6.3, 2.0, 2.2, -1.1],
        ];
        let t = table_from(values, "r");
        let rows: Vec<usize> = (0..6).collect();
        let threshold = 0.6;
        let mask = select_by_correlation(&t, &rows, threshold).unwrap();

        let sub = t.values().select(Axis(0), &rows);
        let idx: Vec<usize> = mask
            .retained
            .iter()
            .map(|q| t.column_index(q).unwrap())
            .collect();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                let c = pearson(sub.column(i), sub.column(j)).abs();
                assert!(c < threshold, "retained pair ({i},{j}) has |corr| {c}");
            }
        }
        for j in 0..t.n_cols() {
            if idx.contains(&j) {
                continue;
            }
            let blocked = idx
                .iter()
                .any(|&i| i < j && pearson(sub.column(i), sub.column(j)).abs() >= threshold);
            assert!(blocked, "dropped column {j} has no retained blocker");
        }
    }

    #[test]
    fn selection_is_pure() {
        let values = array![
            [1.0, 1.1, 0.3],
            [2.0, 2.1, -0.7],
            [3.0, 2.9, 0.9],
            [4.0, 4.2, -0.2],
        ];
        let t = table_from(values, "r");
        let a = select_by_correlation(&t, &[0, 1, 2, 3], 0.4).unwrap();
        let b = select_by_correlation(&t, &[0, 1, 2, 3], 0.4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_and_sequential_selection_agree() {
        let mut values = Array2::zeros((40, 25));
        let mut state = 7u64;
        for v in values.iter_mut() {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            *v = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        }
        let t = table_from(values, "r");
        let rows: Vec<usize> = (0..40).collect();
        for threshold in [0.1, 0.3, 0.7, 0.95] {
            let a = select_by_correlation(&t, &rows, threshold).unwrap();
            let b = select_by_correlation_seq(&t, &rows, threshold).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pearson_matches_hand_value() {
        let x = array![1.0, 2.0, 3.0];
        let y = array![2.0, 4.0, 6.0];
        assert_abs_diff_eq!(pearson(x.view(), y.view()), 1.0, epsilon = 1e-15);
        let z = array![3.0, 1.0, 2.0];
        // cov = ((-1)*1 + 0*(-1) + 1*0)/3 = -1/3; stds sqrt(2/3) each
        assert_abs_diff_eq!(pearson(x.view(), z.view()), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn select_columns_and_block_views() {
        let t = FeatureTable::new(
            vec!["s0".into(), "s1".into()],
            vec![
                FeatureColumn::new("a", "x"),
                FeatureColumn::new("b", "x"),
                FeatureColumn::new("a", "y"),
            ],
            array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
        )
        .unwrap();
        let a = t.block("a").unwrap();
        assert_eq!(
            a.qualified_names(),
            vec!["a.x".to_string(), "a.y".to_string()]
        );
        assert_eq!(a.values()[(1, 1)], 6.0);
        let picked = t.select_columns(&["b.x".to_string()]).unwrap();
        assert_eq!(picked.values()[(0, 0)], 2.0);
        assert!(t.select_columns(&["zz".to_string()]).is_err());
    }
}

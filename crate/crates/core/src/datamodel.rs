//! Datasets, hypotheses and CSV ingestion.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterLevel {
    #[default]
    Primary,
    Coarse,
}

/// The fixed empirical design. Only `y` (or the shift-share column) changes
/// across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<f64>,
    x: DMatrix<f64>,
    column_names: Vec<String>,
    absorb: Option<Vec<usize>>,
    cluster_primary: Option<Vec<usize>>,
    cluster_coarse: Option<Vec<usize>>,
    weights: Option<Vec<f64>>,
    shares: Option<Arc<DMatrix<f64>>>,
    shocks: Option<Vec<f64>>,
    shock_cluster: Option<Vec<usize>>,
    shift_share_col: Option<usize>,
    shares_sum_to_one: bool,
}

/// Re-encode labels densely as 0..G-1 in order of first appearance.
pub fn dense_labels<T: std::hash::Hash + Eq + Clone>(raw: &[T]) -> Vec<usize> {
    let mut seen: HashMap<T, usize> = HashMap::new();
    raw.iter()
        .map(|v| {
            let next = seen.len();
            *seen.entry(v.clone()).or_insert(next)
        })
        .collect()
}

pub fn label_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// Row indices of each group, groups in label order.
pub fn group_members(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); label_count(labels)];
    for (i, &g) in labels.iter().enumerate() {
        out[g].push(i);
    }
    out
}

/// True iff every primary cluster lies inside a single coarse cluster.
pub fn validate_nesting(primary: &[usize], coarse: &[usize]) -> bool {
    let mut owner: HashMap<usize, usize> = HashMap::new();
    primary
        .iter()
        .zip(coarse)
        .all(|(&p, &c)| *owner.entry(p).or_insert(c) == c)
}

#[derive(Debug, Clone)]
pub struct DatasetBuilder {
    ds: Dataset,
}

impl DatasetBuilder {
    pub fn column_names(mut self, names: Vec<String>) -> Self {
        self.ds.column_names = names;
        self
    }
    pub fn absorb(mut self, labels: Vec<usize>) -> Self {
        self.ds.absorb = Some(labels);
        self
    }
    pub fn cluster_primary(mut self, labels: Vec<usize>) -> Self {
        self.ds.cluster_primary = Some(labels);
        self
    }
    pub fn cluster_coarse(mut self, labels: Vec<usize>) -> Self {
        self.ds.cluster_coarse = Some(labels);
        self
    }
    pub fn weights(mut self, w: Vec<f64>) -> Self {
        self.ds.weights = Some(w);
        self
    }
    pub fn clear_weights(mut self) -> Self {
        self.ds.weights = None;
        self
    }
    /// Shares (N×F) and shocks (F). `column` is the regressor built from them.
    pub fn shift_share(mut self, shares: DMatrix<f64>, shocks: Vec<f64>, column: usize) -> Self {
        self.ds.shares = Some(Arc::new(shares));
        self.ds.shocks = Some(shocks);
        self.ds.shift_share_col = Some(column);
        self
    }
    pub fn shock_cluster(mut self, labels: Vec<usize>) -> Self {
        self.ds.shock_cluster = Some(labels);
        self
    }
    pub fn shares_sum_to_one(mut self, flag: bool) -> Self {
        self.ds.shares_sum_to_one = flag;
        self
    }

    pub fn build(mut self) -> Result<Dataset> {
        let ds = &mut self.ds;
        for l in [
            &mut ds.absorb,
            &mut ds.cluster_primary,
            &mut ds.cluster_coarse,
            &mut ds.shock_cluster,
        ]
        .into_iter()
        .flatten()
        {
            *l = dense_labels(l);
        }
        ds.validate()?;
        Ok(self.ds)
    }
}

fn check_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Validation(format!(
            "{name} has length {got}, expected {want}"
        )));
    }
    Ok(())
}

fn check_finite(name: &str, v: impl IntoIterator<Item = f64>) -> Result<()> {
    if v.into_iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("{name} contains NaN or Inf")));
    }
    Ok(())
}

impl Dataset {
    pub fn builder(y: Vec<f64>, x: DMatrix<f64>) -> DatasetBuilder {
        let k = x.ncols();
        DatasetBuilder {
            ds: Dataset {
                y,
                x,
                column_names: (0..k).map(|j| format!("x{j}")).collect(),
                absorb: None,
                cluster_primary: None,
                cluster_coarse: None,
                weights: None,
                shares: None,
                shocks: None,
                shock_cluster: None,
                shift_share_col: None,
                shares_sum_to_one: false,
            },
        }
    }

    /// Rebuild from this dataset, keeping every field.
    pub fn to_builder(&self) -> DatasetBuilder {
        DatasetBuilder { ds: self.clone() }
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        check_len("X rows", self.x.nrows(), n)?;
        check_len("column names", self.column_names.len(), self.x.ncols())?;
        check_finite("y", self.y.iter().copied())?;
        check_finite("X", self.x.iter().copied())?;
        for (name, l) in [
            ("absorb", &self.absorb),
            ("cluster_primary", &self.cluster_primary),
            ("cluster_coarse", &self.cluster_coarse),
        ] {
            if let Some(l) = l {
                check_len(name, l.len(), n)?;
            }
        }
        if let Some(w) = &self.weights {
            check_len("weights", w.len(), n)?;
            check_finite("weights", w.iter().copied())?;
            if w.iter().any(|&v| v <= 0.0) {
                return Err(Error::Validation("weights must be strictly positive".into()));
            }
        }
        if let (Some(p), Some(c)) = (&self.cluster_primary, &self.cluster_coarse) {
            if !validate_nesting(p, c) {
                return Err(Error::Validation(
                    "primary clusters must nest within coarse clusters".into(),
                ));
            }
        }
        match (&self.shares, &self.shocks) {
            (Some(s), Some(g)) => {
                check_len("shares rows", s.nrows(), n)?;
                check_len("shocks", g.len(), s.ncols())?;
                check_finite("shares", s.iter().copied())?;
                check_finite("shocks", g.iter().copied())?;
                if s.iter().any(|&v| v < 0.0) {
                    return Err(Error::Validation("shares must be nonnegative".into()));
                }
                if self.shares_sum_to_one {
                    for (i, row) in s.row_iter().enumerate() {
                        if (row.sum() - 1.0).abs() > 1e-8 {
                            return Err(Error::Validation(format!(
                                "shares in row {i} do not sum to 1"
                            )));
                        }
                    }
                }
                if let Some(sc) = &self.shock_cluster {
                    check_len("shock_cluster", sc.len(), g.len())?;
                }
                if let Some(k) = self.shift_share_col {
                    if k >= self.x.ncols() {
                        return Err(Error::Validation(format!(
                            "shift-share column {k} out of range"
                        )));
                    }
                }
            }
            (None, None) => {
                if self.shock_cluster.is_some() {
                    return Err(Error::Validation("shock_cluster given without shares".into()));
                }
            }
            _ => {
                return Err(Error::Validation(
                    "shares and shocks must be given together".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn nobs(&self) -> usize {
        self.y.len()
    }
    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
    pub fn absorb(&self) -> Option<&[usize]> {
        self.absorb.as_deref()
    }
    pub fn cluster_primary(&self) -> Option<&[usize]> {
        self.cluster_primary.as_deref()
    }
    pub fn cluster_coarse(&self) -> Option<&[usize]> {
        self.cluster_coarse.as_deref()
    }
    pub fn clusters(&self, level: ClusterLevel) -> Option<&[usize]> {
        match level {
            ClusterLevel::Primary => self.cluster_primary(),
            ClusterLevel::Coarse => self.cluster_coarse(),
        }
    }
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }
    pub fn shares(&self) -> Option<&Arc<DMatrix<f64>>> {
        self.shares.as_ref()
    }
    pub fn shocks(&self) -> Option<&[f64]> {
        self.shocks.as_deref()
    }
    pub fn shock_cluster(&self) -> Option<&[usize]> {
        self.shock_cluster.as_deref()
    }
    pub fn shift_share_col(&self) -> Option<usize> {
        self.shift_share_col
    }
    pub fn shares_sum_to_one(&self) -> bool {
        self.shares_sum_to_one
    }

    /// Same design, new outcome. Length is checked; values are trusted.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Dataset> {
        check_len("y", y.len(), self.nobs())?;
        let mut ds = self.clone();
        ds.y = y;
        Ok(ds)
    }

    /// Replace the shift-share regressor and shocks (used by shock resampling).
    pub(crate) fn with_shift_share_draw(&self, x_col: &[f64], shocks: Vec<f64>) -> Dataset {
        let mut ds = self.clone();
        let k = ds.shift_share_col.expect("shift-share column checked by caller");
        for (i, v) in x_col.iter().enumerate() {
            ds.x[(i, k)] = *v;
        }
        ds.shocks = Some(shocks);
        ds
    }
}

/// H0: Rβ = q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHypothesis {
    pub r: DMatrix<f64>,
    pub q: DVector<f64>,
}

impl LinearHypothesis {
    pub fn new(r: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        if r.nrows() != q.len() {
            return Err(Error::Config("R and q have different row counts".into()));
        }
        if r.nrows() == 0 || r.nrows() > r.ncols() {
            return Err(Error::Config("R must have between 1 and K rows".into()));
        }
        if crate::regression::pivoted_qr(&r.transpose()).is_err() {
            return Err(Error::Config("R must have full row rank".into()));
        }
        Ok(LinearHypothesis { r, q })
    }

    /// H0: β_k = value in a model with `ncols` coefficients.
    pub fn coefficient(k: usize, ncols: usize, value: f64) -> Self {
        let mut r = DMatrix::zeros(1, ncols);
        r[(0, k)] = 1.0;
        LinearHypothesis {
            r,
            q: DVector::from_element(1, value),
        }
    }

    pub fn rows(&self) -> usize {
        self.r.nrows()
    }

    /// The single row of a scalar hypothesis.
    pub fn scalar(&self) -> Result<(Vec<f64>, f64)> {
        if self.rows() != 1 {
            return Err(Error::Config(
                "only scalar hypotheses (one restriction) are supported here".into(),
            ));
        }
        Ok((self.r.row(0).iter().copied().collect(), self.q[0]))
    }

    /// Column index when the hypothesis restricts a single coefficient.
    pub fn tested_column(&self) -> Option<usize> {
        if self.rows() != 1 {
            return None;
        }
        let nz: Vec<usize> = (0..self.r.ncols())
            .filter(|&j| self.r[(0, j)] != 0.0)
            .collect();
        (nz.len() == 1).then(|| nz[0])
    }

    /// Same restriction with a different right-hand side.
    pub fn with_q(&self, q: f64) -> Result<Self> {
        self.scalar()?;
        Ok(LinearHypothesis {
            r: self.r.clone(),
            q: DVector::from_element(1, q),
        })
    }
}

/// Column roles for [`load_dataset`].
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Schema {
    pub outcome: String,
    pub regressors: Vec<String>,
    #[serde(default)]
    pub intercept: bool,
    #[serde(default)]
    pub absorb: Option<String>,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default)]
    pub coarse: Option<String>,
    #[serde(default)]
    pub weights: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: u8,
}

fn default_delimiter() -> u8 {
    b','
}

impl Schema {
    pub fn new(outcome: &str, regressors: &[&str]) -> Self {
        Schema {
            outcome: outcome.into(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            delimiter: b',',
            ..Default::default()
        }
    }
}

fn parse_numeric(cell: &str, row: usize, column: &str) -> Result<f64> {
    let t = cell.trim();
    if t.is_empty() {
        return Err(Error::Validation(format!(
            "missing value at row {row}, column '{column}'"
        )));
    }
    let v: f64 = t.parse().map_err(|_| Error::Parse {
        row,
        column: column.into(),
        message: format!("'{t}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Validation(format!(
            "non-finite value at row {row}, column '{column}'"
        )));
    }
    Ok(v)
}

/// Read a delimited file with a header row. Rows are numbered from 1
/// (the first data row) in error messages.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    if schema.regressors.is_empty() {
        return Err(Error::Schema("at least one regressor column is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let y_idx = col(&schema.outcome)?;
    let x_idx: Vec<usize> = schema.regressors.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let opt = |c: &Option<String>| c.as_deref().map(col).transpose();
    let absorb_idx = opt(&schema.absorb)?;
    let cl_idx = opt(&schema.cluster)?;
    let co_idx = opt(&schema.coarse)?;
    let w_idx = opt(&schema.weights)?;

    let mut y = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    let mut cats: [Vec<String>; 3] = Default::default();
    let mut w = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        y.push(parse_numeric(cell(y_idx), row, &schema.outcome)?);
        if schema.intercept {
            xs.push(1.0);
        }
        for (j, &i) in x_idx.iter().enumerate() {
            xs.push(parse_numeric(cell(i), row, &schema.regressors[j])?);
        }
        for (slot, idx, name) in [
            (0, absorb_idx, &schema.absorb),
            (1, cl_idx, &schema.cluster),
            (2, co_idx, &schema.coarse),
        ] {
            if let Some(i) = idx {
                let v = cell(i).trim();
                if v.is_empty() {
                    return Err(Error::Validation(format!(
                        "missing value at row {row}, column '{}'",
                        name.as_deref().unwrap_or("")
                    )));
                }
                cats[slot].push(v.to_string());
            }
        }
        if let Some(i) = w_idx {
            w.push(parse_numeric(cell(i), row, schema.weights.as_deref().unwrap_or(""))?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::Validation("no data rows".into()));
    }
    let k = x_idx.len() + usize::from(schema.intercept);
    let x = DMatrix::from_row_slice(n, k, &xs);
    let mut names: Vec<String> = Vec::new();
    if schema.intercept {
        names.push("(intercept)".into());
    }
    names.extend(schema.regressors.iter().cloned());
    let [a, c, co] = cats;
    let mut b = Dataset::builder(y, x).column_names(names);
    if absorb_idx.is_some() {
        b = b.absorb(dense_labels(&a));
    }
    if cl_idx.is_some() {
        b = b.cluster_primary(dense_labels(&c));
    }
    if co_idx.is_some() {
        b = b.cluster_coarse(dense_labels(&co));
    }
    if w_idx.is_some() {
        b = b.weights(w);
    }
    b.build()
}

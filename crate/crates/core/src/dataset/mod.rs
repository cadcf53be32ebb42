//! Typed tabular data: schemas, the row-major cell matrix, CSV ingestion,
//! the balanced real-vs-synthetic detection dataset and descriptive statistics.
//!
//! Cells are stored as `f64`. Numeric cells hold their value; categorical
//! cells hold the index of their label in the column's category list, or
//! [`UNKNOWN_CODE`] for labels the schema does not list.

mod csv_io;
mod detection;
mod stats;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use csv_io::{infer_schema, load_csv, load_csv_with, read_schema_file, InferOptions};
pub use detection::{build_detection_dataset, train_test_split, DetectionDataset, Split};
pub use stats::{
    column_statistics, CategoricalMarginal, CompareOp, ConditionalQuery, ConditionalResult,
    CorrelationMatrix, NumericMarginal, Predicate, PredicateValue, Statistic, StatsReport,
};

/// Code stored for categorical cells whose label is not in the schema.
pub const UNKNOWN_CODE: f64 = -1.0;
pub const UNKNOWN_LABEL: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    Reject,
    #[default]
    DropRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
}

impl ColumnSchema {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
            missing_policy: MissingPolicy::default(),
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            missing_policy: MissingPolicy::default(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }
}

/// Ordered list of column definitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            if seen.insert(c.name.as_str(), i).is_some() {
                return Err(Error::invalid(format!("duplicate column name `{}`", c.name)));
            }
            match c.kind {
                ColumnKind::Categorical => {
                    if c.categories.is_empty() {
                        return Err(Error::invalid(format!(
                            "categorical column `{}` lists no categories",
                            c.name
                        )));
                    }
                    let mut labels = HashMap::new();
                    for l in &c.categories {
                        if labels.insert(l.as_str(), ()).is_some() {
                            return Err(Error::invalid(format!(
                                "column `{}` lists category `{l}` twice",
                                c.name
                            )));
                        }
                    }
                }
                ColumnKind::Numeric => {
                    if !c.categories.is_empty() {
                        return Err(Error::invalid(format!(
                            "numeric column `{}` must not list categories",
                            c.name
                        )));
                    }
                }
            }
        }
        Ok(Schema { columns })
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &ColumnSchema {
        &self.columns[j]
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::invalid(format!("no column named `{name}`")))
    }

    /// Code for a categorical label; [`UNKNOWN_CODE`] when unlisted.
    pub fn encode_label(&self, j: usize, label: &str) -> f64 {
        self.columns[j]
            .categories
            .iter()
            .position(|c| c == label)
            .map_or(UNKNOWN_CODE, |k| k as f64)
    }

    /// Human-readable cell value.
    pub fn format_cell(&self, j: usize, value: f64) -> String {
        let col = &self.columns[j];
        match col.kind {
            ColumnKind::Numeric => format!("{value}"),
            ColumnKind::Categorical => category_label(col, value).to_string(),
        }
    }

    /// SHA-256 over names, kinds and category lists.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.columns {
            h.update(c.name.as_bytes());
            h.update([0u8]);
            h.update(match c.kind {
                ColumnKind::Numeric => b"n",
                ColumnKind::Categorical => b"c",
            });
            for l in &c.categories {
                h.update([1u8]);
                h.update(l.as_bytes());
            }
            h.update([2u8]);
        }
        hex::encode(h.finalize())
    }

    /// Merge two schemas with identical names and kinds; category lists are
    /// unioned keeping `self`'s order and appending labels only `other` has.
    pub fn union(&self, other: &Schema) -> Result<Schema> {
        if self.len() != other.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} columns vs {} columns",
                self.len(),
                other.len()
            )));
        }
        let mut cols = Vec::with_capacity(self.len());
        for (a, b) in self.columns.iter().zip(&other.columns) {
            if a.name != b.name {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` vs `{}`",
                    a.name, b.name
                )));
            }
            if a.kind != b.kind {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` is {:?} in one input and {:?} in the other",
                    a.name, a.kind, b.kind
                )));
            }
            let mut merged = a.clone();
            for l in &b.categories {
                if !merged.categories.contains(l) {
                    merged.categories.push(l.clone());
                }
            }
            cols.push(merged);
        }
        Schema::new(cols)
    }
}

pub(crate) fn category_label(col: &ColumnSchema, code: f64) -> &str {
    if code >= 0.0 && (code as usize) < col.categories.len() && code.fract() == 0.0 {
        &col.categories[code as usize]
    } else {
        UNKNOWN_LABEL
    }
}

/// Whether a categorical code points at a listed category.
pub fn is_known_code(code: f64, n_categories: usize) -> bool {
    code >= 0.0 && code.fract() == 0.0 && (code as usize) < n_categories
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
    Unlabeled,
}

/// Row-major table of typed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    schema: Schema,
    values: Vec<f64>,
    n_rows: usize,
    pub provenance: Provenance,
}

impl TabularDataset {
    /// Builds a dataset from row-major values, checking cell validity.
    pub fn new(schema: Schema, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        let p = schema.len();
        if p == 0 {
            return Err(Error::invalid("dataset needs at least one column"));
        }
        if !values.len().is_multiple_of(p) {
            return Err(Error::invalid(format!(
                "{} cells do not fill rows of {p} columns",
                values.len()
            )));
        }
        let n_rows = values.len() / p;
        for (k, &v) in values.iter().enumerate() {
            let (i, j) = (k / p, k % p);
            let col = schema.column(j);
            let ok = match col.kind {
                ColumnKind::Numeric => v.is_finite(),
                ColumnKind::Categorical => v == UNKNOWN_CODE || is_known_code(v, col.n_categories()),
            };
            if !ok {
                return Err(Error::Parse {
                    row: i,
                    message: format!("invalid cell {v} in column `{}`", col.name),
                });
            }
        }
        Ok(TabularDataset {
            schema,
            values,
            n_rows,
            provenance,
        })
    }

    pub fn from_rows(schema: Schema, rows: &[Vec<f64>], provenance: Provenance) -> Result<Self> {
        let p = schema.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::Parse {
                row: i,
                message: format!("expected {p} cells, found {}", r.len()),
            });
        }
        Self::new(schema, rows.concat(), provenance)
    }

    pub fn empty(schema: Schema, provenance: Provenance) -> Self {
        TabularDataset {
            schema,
            values: Vec::new(),
            n_rows: 0,
            provenance,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_cols())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> TabularDataset {
        let mut values = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        TabularDataset {
            schema: self.schema.clone(),
            values,
            n_rows: idx.len(),
            provenance: self.provenance,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Re-expresses the data under `target`, which must have the same column
    /// names and kinds. Categorical labels are remapped by name; labels the
    /// target does not list become unknown.
    pub fn conform_to(&self, target: &Schema) -> Result<TabularDataset> {
        if self.schema == *target {
            return Ok(self.clone());
        }
        if self.schema.len() != target.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} columns vs {} expected",
                self.schema.len(),
                target.len()
            )));
        }
        let mut maps: Vec<Option<Vec<f64>>> = Vec::with_capacity(target.len());
        for (j, (a, b)) in self.schema.columns.iter().zip(target.columns()).enumerate() {
            if a.name != b.name || a.kind != b.kind {
                return Err(Error::SchemaMismatch(format!(
                    "column {j}: `{}` ({:?}) vs expected `{}` ({:?})",
                    a.name, a.kind, b.name, b.kind
                )));
            }
            maps.push(a.is_categorical().then(|| {
                a.categories
                    .iter()
                    .map(|l| target.encode_label(j, l))
                    .collect()
            }));
        }
        let p = target.len();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| match &maps[k % p] {
                Some(m) if v != UNKNOWN_CODE => m[v as usize],
                _ => v,
            })
            .collect();
        Ok(TabularDataset {
            schema: target.clone(),
            values,
            n_rows: self.n_rows,
            provenance: self.provenance,
        })
    }

    /// Stacks rows of datasets sharing one schema.
    pub fn concat(parts: &[&TabularDataset], provenance: Provenance) -> Result<TabularDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("nothing to concatenate".into()))?;
        let mut values = Vec::new();
        let mut n_rows = 0;
        for d in parts {
            if d.schema != first.schema {
                return Err(Error::SchemaMismatch("concatenated datasets differ".into()));
            }
            values.extend_from_slice(&d.values);
            n_rows += d.n_rows;
        }
        Ok(TabularDataset {
            schema: first.schema.clone(),
            values,
            n_rows,
            provenance,
        })
    }

    /// Replaces one column's values.
    pub fn with_column(&self, j: usize, column: &[f64]) -> Result<TabularDataset> {
        if column.len() != self.n_rows {
            return Err(Error::invalid("replacement column has wrong length"));
        }
        let mut values = self.values.clone();
        let p = self.n_cols();
        for (i, &v) in column.iter().enumerate() {
            values[i * p + j] = v;
        }
        TabularDataset::new(self.schema.clone(), values, self.provenance)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        for row in self.rows() {
            w.write_record(
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| self.schema.format_cell(j, v)),
            )?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Per-column `(min, max)` of numeric columns; `None` for categorical ones.
    pub fn numeric_ranges(&self) -> Vec<Option<(f64, f64)>> {
        (0..self.n_cols())
            .map(|j| {
                (self.schema.column(j).kind == ColumnKind::Numeric && self.n_rows > 0).then(|| {
                    self.rows().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                        (lo.min(r[j]), hi.max(r[j]))
                    })
                })
            })
            .collect()
    }
}

use std::collections::BTreeSet;
use std::path::Path;

use super::{ColumnKind, ColumnSchema, MissingPolicy, Provenance, Schema, TabularDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct InferOptions {
    /// Integer-valued columns with at most this many distinct values are
    /// treated as categorical.
    pub integer_category_threshold: usize,
    pub missing_policy: MissingPolicy,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            integer_category_threshold: 20,
            missing_policy: MissingPolicy::DropRow,
        }
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty()
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Infers column kinds and category lists from string rows.
///
/// A column is numeric when every non-missing cell parses as a finite number,
/// unless all values are integers and there are at most
/// `integer_category_threshold` distinct ones.
pub fn infer_schema(header: &[String], rows: &[Vec<String>], opts: &InferOptions) -> Vec<ColumnSchema> {
    header
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let cells = rows.iter().map(|r| r[j].as_str()).filter(|c| !is_missing(c));
            let distinct: BTreeSet<&str> = cells.clone().collect();
            let parsed: Option<Vec<f64>> = distinct.iter().map(|c| parse_number(c)).collect();
            let numeric = match &parsed {
                Some(vals) if !vals.is_empty() => {
                    let all_integer = vals.iter().all(|v| v.fract() == 0.0);
                    let mut uniq = vals.clone();
                    uniq.sort_by(f64::total_cmp);
                    uniq.dedup();
                    !all_integer || uniq.len() > opts.integer_category_threshold
                }
                _ => false,
            };
            if numeric {
                ColumnSchema {
                    name: name.clone(),
                    kind: ColumnKind::Numeric,
                    categories: Vec::new(),
                    missing_policy: opts.missing_policy,
                }
            } else {
                let mut cats: Vec<&str> = distinct.into_iter().collect();
                if let Some(vals) = &parsed {
                    // numeric-looking labels sort by value, not lexically
                    let mut pairs: Vec<(f64, &str)> = vals.iter().copied().zip(cats).collect();
                    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
                    cats = pairs.into_iter().map(|(_, c)| c).collect();
                }
                let mut categories: Vec<String> = cats.into_iter().map(str::to_string).collect();
                if categories.is_empty() {
                    categories.push(super::UNKNOWN_LABEL.to_string());
                }
                ColumnSchema {
                    name: name.clone(),
                    kind: ColumnKind::Categorical,
                    categories,
                    missing_policy: opts.missing_policy,
                }
            }
        })
        .collect()
}

pub(crate) fn read_records(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(std::io::BufReader::new(file));
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Empty(format!("{} has no header row", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
                row: i + 1,
                message: format!("ragged row: expected {expected_len} cells, found {len}"),
            },
            _ => Error::Csv(e),
        })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Loads a CSV file, inferring the schema with default options when none is given.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&Schema>) -> Result<TabularDataset> {
    load_csv_with(path, schema, &InferOptions::default())
}

pub fn load_csv_with(
    path: impl AsRef<Path>,
    schema: Option<&Schema>,
    opts: &InferOptions,
) -> Result<TabularDataset> {
    let path = path.as_ref();
    let (header, rows) = read_records(path)?;
    let (schema, order) = match schema {
        Some(s) => {
            let mut order = Vec::with_capacity(s.len());
            for c in s.columns() {
                let pos = header.iter().position(|h| *h == c.name).ok_or_else(|| {
                    Error::SchemaMismatch(format!("column `{}` missing from {}", c.name, path.display()))
                })?;
                order.push(pos);
            }
            if header.len() != s.len() {
                return Err(Error::SchemaMismatch(format!(
                    "{} has {} columns, schema lists {}",
                    path.display(),
                    header.len(),
                    s.len()
                )));
            }
            (s.clone(), order)
        }
        None => {
            let cols = infer_schema(&header, &rows, opts);
            (Schema::new(cols)?, (0..header.len()).collect())
        }
    };
    let data = parse_rows(&schema, &rows, &order)?;
    if data.is_empty() {
        return Err(Error::Empty(format!("{} has zero data rows", path.display())));
    }
    Ok(data)
}

fn parse_rows(schema: &Schema, rows: &[Vec<String>], order: &[usize]) -> Result<TabularDataset> {
    let p = schema.len();
    let mut values = Vec::with_capacity(rows.len() * p);
    let mut cells = Vec::with_capacity(p);
    'rows: for (i, row) in rows.iter().enumerate() {
        cells.clear();
        for (j, &src) in order.iter().enumerate() {
            let col = schema.column(j);
            let raw = row[src].as_str();
            let parsed = if is_missing(raw) {
                None
            } else {
                match col.kind {
                    ColumnKind::Numeric => parse_number(raw),
                    ColumnKind::Categorical => Some(schema.encode_label(j, raw)),
                }
            };
            match (parsed, col.missing_policy) {
                (Some(v), _) => cells.push(v),
                (None, MissingPolicy::DropRow) => continue 'rows,
                (None, MissingPolicy::Reject) => {
                    return Err(Error::Parse {
                        row: i + 1,
                        message: if is_missing(raw) {
                            format!("missing value in column `{}`", col.name)
                        } else {
                            format!("cannot parse `{raw}` as a number in column `{}`", col.name)
                        },
                    })
                }
            }
        }
        values.extend_from_slice(&cells);
    }
    TabularDataset::new(schema.clone(), values, Provenance::Unlabeled)
}

/// Reads a JSON schema file: an array of `{name, kind, categories?, missing_policy?}`.
pub fn read_schema_file(path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cols: Vec<ColumnSchema> = serde_json::from_str(&text)?;
    Schema::new(cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UNKNOWN_CODE;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn col(vals: &[&str]) -> (Vec<String>, Vec<Vec<String>>) {
        (
            vec!["v".to_string()],
            vals.iter().map(|v| vec![v.to_string()]).collect(),
        )
    }

    #[test]
    fn infers_fractional_column_as_numeric() {
        let (h, r) = col(&["1.5", "2.0", "3.7"]);
        assert_eq!(infer_schema(&h, &r, &InferOptions::default())[0].kind, ColumnKind::Numeric);
    }

    #[test]
    fn infers_strings_as_categorical() {
        let (h, r) = col(&["yes", "no", "yes"]);
        let s = infer_schema(&h, &r, &InferOptions::default());
        assert_eq!(s[0].kind, ColumnKind::Categorical);
        assert_eq!(s[0].categories, vec!["no", "yes"]);
    }

    #[test]
    fn low_cardinality_integers_become_categorical() {
        let vals: Vec<String> = (0..1000).map(|i| ((i % 3) + 1).to_string()).collect();
        let refs: Vec<&str> = vals.iter().map(String::as_str).collect();
        let (h, r) = col(&refs);
        let s = infer_schema(&h, &r, &InferOptions::default());
        assert_eq!(s[0].kind, ColumnKind::Categorical);
        assert_eq!(s[0].categories, vec!["1", "2", "3"]);

        let vals: Vec<String> = (0..1000).map(|i| (i % 21).to_string()).collect();
        let refs: Vec<&str> = vals.iter().map(String::as_str).collect();
        let (h, r) = col(&refs);
        assert_eq!(infer_schema(&h, &r, &InferOptions::default())[0].kind, ColumnKind::Numeric);
    }

    #[test]
    fn header_only_file_is_an_error() {
        let f = write("a,b\n");
        assert!(matches!(load_csv(f.path(), None), Err(Error::Empty(_))));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let f = write("a,b\n1,2\n3\n");
        assert!(matches!(load_csv(f.path(), None), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_values_follow_policy() {
        let f = write("a,b\n1.5,x\n,y\n2.5,\n3.5,y\n");
        let d = load_csv(f.path(), None).unwrap();
        assert_eq!(d.n_rows(), 2);

        let schema = Schema::new(vec![
            ColumnSchema {
                missing_policy: MissingPolicy::Reject,
                ..ColumnSchema::numeric("a")
            },
            ColumnSchema::categorical("b", ["x", "y"]),
        ])
        .unwrap();
        assert!(matches!(load_csv(f.path(), Some(&schema)), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn unparseable_numeric_under_reject() {
        let f = write("a\n1.0\nabc\n");
        let schema = Schema::new(vec![ColumnSchema {
            missing_policy: MissingPolicy::Reject,
            ..ColumnSchema::numeric("a")
        }])
        .unwrap();
        assert!(load_csv(f.path(), Some(&schema)).is_err());
    }

    #[test]
    fn schema_reorders_columns_and_trims_labels() {
        let f = write("b,a\n x ,1\ny,2\nz,3\n");
        let schema = Schema::new(vec![
            ColumnSchema::numeric("a"),
            ColumnSchema::categorical("b", ["x", "y"]),
        ])
        .unwrap();
        let d = load_csv(f.path(), Some(&schema)).unwrap();
        assert_eq!(d.values(), &[1.0, 0.0, 2.0, 1.0, 3.0, UNKNOWN_CODE]);
    }

    #[test]
    fn header_mismatch_is_schema_error() {
        let f = write("a,c\n1,2\n");
        let schema = Schema::new(vec![ColumnSchema::numeric("a"), ColumnSchema::numeric("b")]).unwrap();
        assert!(matches!(load_csv(f.path(), Some(&schema)), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn schema_file_parses() {
        let f = write(r#"[{"name":"a","kind":"numeric"},{"name":"b","kind":"categorical","categories":["x"],"missing_policy":"reject"}]"#);
        let s = read_schema_file(f.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.column(1).missing_policy, MissingPolicy::Reject);
    }
}

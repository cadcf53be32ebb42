use serde::{Deserialize, Serialize};

use super::{ColumnKind, Schema, TabularDataset, UNKNOWN_CODE, UNKNOWN_LABEL};
use crate::error::{Error, Result};
use crate::math::{mean, pearson, quantile_sorted, sample_sd, sorted_copy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredicateValue {
    Number(f64),
    Label(String),
}

/// `column op value`, e.g. `age == 17` or `occupation == "Sales"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub op: CompareOp,
    pub value: PredicateValue,
}

impl Predicate {
    pub fn new(column: impl Into<String>, op: CompareOp, value: PredicateValue) -> Self {
        Predicate {
            column: column.into(),
            op,
            value,
        }
    }

    pub fn num(column: impl Into<String>, op: CompareOp, value: f64) -> Self {
        Self::new(column, op, PredicateValue::Number(value))
    }

    pub fn label(column: impl Into<String>, value: impl Into<String>) -> Self {
        Self::new(column, CompareOp::Eq, PredicateValue::Label(value.into()))
    }

    fn compile(&self, schema: &Schema) -> Result<CompiledPredicate> {
        let j = schema.require(&self.column)?;
        let col = schema.column(j);
        let target = match (col.kind, &self.value) {
            (ColumnKind::Numeric, PredicateValue::Number(v)) => *v,
            (ColumnKind::Numeric, PredicateValue::Label(s)) => s.parse().map_err(|_| {
                Error::invalid(format!("`{s}` is not a number for column `{}`", col.name))
            })?,
            (ColumnKind::Categorical, PredicateValue::Label(s)) => schema.encode_label(j, s),
            (ColumnKind::Categorical, PredicateValue::Number(v)) => schema.encode_label(j, &format!("{v}")),
        };
        if col.kind == ColumnKind::Categorical && !matches!(self.op, CompareOp::Eq | CompareOp::Ne) {
            return Err(Error::invalid(format!(
                "only == and != apply to categorical column `{}`",
                col.name
            )));
        }
        // an unlisted label never matches a real category
        let never = col.kind == ColumnKind::Categorical && target == UNKNOWN_CODE;
        Ok(CompiledPredicate {
            column: j,
            op: self.op,
            target,
            never,
        })
    }
}

struct CompiledPredicate {
    column: usize,
    op: CompareOp,
    target: f64,
    never: bool,
}

impl CompiledPredicate {
    fn matches(&self, row: &[f64]) -> bool {
        let v = row[self.column];
        if self.never {
            return self.op == CompareOp::Ne;
        }
        match self.op {
            CompareOp::Eq => v == self.target,
            CompareOp::Ne => v != self.target,
            CompareOp::Lt => v < self.target,
            CompareOp::Le => v <= self.target,
            CompareOp::Gt => v > self.target,
            CompareOp::Ge => v >= self.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "statistic", rename_all = "snake_case")]
pub enum Statistic {
    Mean { column: String },
    Fraction { predicate: Predicate },
    Correlation { x: String, y: String },
}

/// A statistic evaluated on the rows selected by all `given` predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub statistic: Statistic,
    #[serde(default)]
    pub given: Vec<Predicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalResult {
    pub query: ConditionalQuery,
    pub n_selected: usize,
    /// `None` when the predicates select no rows (or a correlation is undefined).
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericMarginal {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryFrequency {
    pub label: String,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalMarginal {
    pub column: String,
    pub frequencies: Vec<CategoryFrequency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub columns: Vec<String>,
    /// Pearson correlations; `None` where a column has zero variance.
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_rows: usize,
    pub numeric: Vec<NumericMarginal>,
    pub categorical: Vec<CategoricalMarginal>,
    pub correlations: CorrelationMatrix,
    pub conditionals: Vec<ConditionalResult>,
}

impl StatsReport {
    pub fn conditional(&self, label: &str) -> Option<&ConditionalResult> {
        self.conditionals
            .iter()
            .find(|c| c.query.label.as_deref() == Some(label))
    }

    pub fn correlation(&self, x: &str, y: &str) -> Option<f64> {
        let i = self.correlations.columns.iter().position(|c| c == x)?;
        let j = self.correlations.columns.iter().position(|c| c == y)?;
        self.correlations.values[i][j]
    }
}

/// Marginals, pairwise numeric correlations and the requested conditional summaries.
pub fn column_statistics(d: &TabularDataset, conditionals: &[ConditionalQuery]) -> Result<StatsReport> {
    if d.is_empty() {
        return Err(Error::Empty("no rows to summarize".into()));
    }
    let schema = d.schema();
    let columns: Vec<Vec<f64>> = (0..d.n_cols()).map(|j| d.column(j)).collect();
    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    let mut numeric_idx = Vec::new();
    for (j, col) in schema.columns().iter().enumerate() {
        let vals = &columns[j];
        match col.kind {
            ColumnKind::Numeric => {
                numeric_idx.push(j);
                let sorted = sorted_copy(vals);
                numeric.push(NumericMarginal {
                    column: col.name.clone(),
                    mean: mean(vals),
                    sd: sample_sd(vals),
                    min: sorted[0],
                    q25: quantile_sorted(&sorted, 0.25),
                    median: quantile_sorted(&sorted, 0.5),
                    q75: quantile_sorted(&sorted, 0.75),
                    max: sorted[sorted.len() - 1],
                });
            }
            ColumnKind::Categorical => {
                let mut counts = vec![0usize; col.n_categories() + 1];
                for &v in vals {
                    if v == UNKNOWN_CODE {
                        counts[col.n_categories()] += 1;
                    } else {
                        counts[v as usize] += 1;
                    }
                }
                let n = vals.len() as f64;
                let mut frequencies: Vec<CategoryFrequency> = col
                    .categories
                    .iter()
                    .zip(&counts)
                    .map(|(label, &count)| CategoryFrequency {
                        label: label.clone(),
                        count,
                        frequency: count as f64 / n,
                    })
                    .collect();
                if counts[col.n_categories()] > 0 {
                    frequencies.push(CategoryFrequency {
                        label: UNKNOWN_LABEL.into(),
                        count: counts[col.n_categories()],
                        frequency: counts[col.n_categories()] as f64 / n,
                    });
                }
                categorical.push(CategoricalMarginal {
                    column: col.name.clone(),
                    frequencies,
                });
            }
        }
    }

    let k = numeric_idx.len();
    let mut values = vec![vec![None; k]; k];
    for a in 0..k {
        values[a][a] = Some(1.0);
        for b in (a + 1)..k {
            let r = pearson(&columns[numeric_idx[a]], &columns[numeric_idx[b]]);
            values[a][b] = r;
            values[b][a] = r;
        }
    }
    let correlations = CorrelationMatrix {
        columns: numeric_idx.iter().map(|&j| schema.column(j).name.clone()).collect(),
        values,
    };

    let conditionals = conditionals
        .iter()
        .map(|q| evaluate_query(d, q))
        .collect::<Result<Vec<_>>>()?;

    Ok(StatsReport {
        n_rows: d.n_rows(),
        numeric,
        categorical,
        correlations,
        conditionals,
    })
}

fn numeric_column(schema: &Schema, name: &str) -> Result<usize> {
    let j = schema.require(name)?;
    if schema.column(j).kind != ColumnKind::Numeric {
        return Err(Error::invalid(format!("column `{name}` is not numeric")));
    }
    Ok(j)
}

fn evaluate_query(d: &TabularDataset, q: &ConditionalQuery) -> Result<ConditionalResult> {
    let schema = d.schema();
    let given = q
        .given
        .iter()
        .map(|p| p.compile(schema))
        .collect::<Result<Vec<_>>>()?;
    let selected: Vec<&[f64]> = d.rows().filter(|r| given.iter().all(|p| p.matches(r))).collect();
    let n_selected = selected.len();
    let value = match &q.statistic {
        Statistic::Mean { column } => {
            let j = numeric_column(schema, column)?;
            (n_selected > 0).then(|| selected.iter().map(|r| r[j]).sum::<f64>() / n_selected as f64)
        }
        Statistic::Fraction { predicate } => {
            let p = predicate.compile(schema)?;
            (n_selected > 0)
                .then(|| selected.iter().filter(|r| p.matches(r)).count() as f64 / n_selected as f64)
        }
        Statistic::Correlation { x, y } => {
            let (jx, jy) = (numeric_column(schema, x)?, numeric_column(schema, y)?);
            let xs: Vec<f64> = selected.iter().map(|r| r[jx]).collect();
            let ys: Vec<f64> = selected.iter().map(|r| r[jy]).collect();
            pearson(&xs, &ys)
        }
    };
    Ok(ConditionalResult {
        query: q.clone(),
        n_selected,
        value,
    })
}

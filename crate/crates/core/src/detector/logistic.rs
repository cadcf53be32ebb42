use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::Classifier;
use crate::dataset::{ColumnKind, Schema, TabularDataset, UNKNOWN_CODE};
use crate::error::{Error, Result};
use crate::math::sigmoid;

pub const LOGISTIC_L2: f64 = 1e-2;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Encoding {
    /// Standardized numeric column.
    Numeric { mean: f64, sd: f64 },
    /// One indicator per listed category; unknown codes encode as all zeros.
    OneHot { n_categories: usize },
}

/// L2-penalized logistic regression fitted by iteratively reweighted least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    schema: Schema,
    encodings: Vec<Encoding>,
    /// Intercept first, then one weight per encoded column.
    pub coefficients: Vec<f64>,
}

impl LogisticModel {
    fn encode_into(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        for (v, e) in row.iter().zip(&self.encodings) {
            match e {
                Encoding::Numeric { mean, sd } => out.push((v - mean) / sd),
                Encoding::OneHot { n_categories } => {
                    let start = out.len();
                    out.resize(start + n_categories, 0.0);
                    if *v != UNKNOWN_CODE {
                        out[start + *v as usize] = 1.0;
                    }
                }
            }
        }
    }

    pub fn fit(data: &TabularDataset, labels: &[u8], rows: &[usize]) -> Result<Self> {
        let encodings: Vec<Encoding> = data
            .schema()
            .columns()
            .iter()
            .enumerate()
            .map(|(j, c)| match c.kind {
                ColumnKind::Numeric => {
                    let xs: Vec<f64> = rows.iter().map(|&r| data.get(r, j)).collect();
                    let mean = crate::math::mean(&xs);
                    let sd = crate::math::sample_sd(&xs);
                    Encoding::Numeric {
                        mean,
                        sd: if sd > 0.0 { sd } else { 1.0 },
                    }
                }
                ColumnKind::Categorical => Encoding::OneHot {
                    n_categories: c.n_categories(),
                },
            })
            .collect();
        let mut model = LogisticModel {
            schema: data.schema().clone(),
            encodings,
            coefficients: Vec::new(),
        };
        let mut buf = Vec::new();
        model.encode_into(data.row(rows[0]), &mut buf);
        let k = buf.len();
        let n = rows.len();
        let mut x = DMatrix::<f64>::zeros(n, k);
        for (i, &r) in rows.iter().enumerate() {
            model.encode_into(data.row(r), &mut buf);
            for (j, v) in buf.iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        let y = DVector::from_iterator(n, rows.iter().map(|&r| labels[r] as f64));

        let mut beta = DVector::<f64>::zeros(k);
        let mut penalty = DMatrix::<f64>::identity(k, k) * (LOGISTIC_L2 * n as f64);
        penalty[(0, 0)] = 0.0;
        for _ in 0..MAX_ITER {
            let eta = &x * &beta;
            let p = eta.map(sigmoid);
            let w = p.map(|v| (v * (1.0 - v)).max(1e-10));
            let grad = x.transpose() * (&y - &p) - &penalty * &beta;
            let mut xw = x.clone();
            for (i, mut row) in xw.row_iter_mut().enumerate() {
                row *= w[i];
            }
            let hess = x.transpose() * xw + &penalty;
            let step = hess
                .cholesky()
                .ok_or_else(|| Error::Numerical("logistic Hessian is not positive definite".into()))?
                .solve(&grad);
            beta += &step;
            if step.amax() < 1e-10 {
                break;
            }
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("logistic regression diverged".into()));
        }
        model.coefficients = beta.iter().copied().collect();
        Ok(model)
    }
}

impl Classifier for LogisticModel {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn proba_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.log_odds_row(row))
    }

    fn log_odds_row(&self, row: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.coefficients.len());
        self.encode_into(row, &mut buf);
        buf.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

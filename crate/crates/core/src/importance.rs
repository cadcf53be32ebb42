//! Global importance rankings: permutation importance on held-out rows,
//! mean absolute Shapley values, and main/pairwise interaction strengths.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DetectionDataset, Split};
use crate::detector::{classify, Classifier};
use crate::error::{Error, Result};
use crate::math::{logit, mean, sample_sd};
use crate::rng::rng_for;
use crate::shapley::{InteractionMatrix, ShapleyVector};

pub const DEFAULT_PFI_REPEATS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Pfi,
    MeanAbsShap,
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfiLoss {
    #[default]
    LogLoss,
    OneMinusAccuracy,
}

impl PfiLoss {
    fn row_loss(self, score: f64, label: u8) -> f64 {
        match self {
            PfiLoss::LogLoss => crate::detector::gbdt::margin_log_loss(logit(score), label),
            PfiLoss::OneMinusAccuracy => f64::from(classify(score) != label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub features: Vec<String>,
    pub mean: f64,
    pub sd: f64,
    /// Standard error of `mean`.
    pub se: f64,
    pub values: Vec<f64>,
}

impl ImportanceEntry {
    fn from_values(features: Vec<String>, values: Vec<f64>, mean_value: f64) -> Self {
        let sd = sample_sd(&values);
        let se = if values.is_empty() {
            0.0
        } else {
            sd / (values.len() as f64).sqrt()
        };
        ImportanceEntry {
            features,
            mean: mean_value,
            sd,
            se,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub method: ImportanceMethod,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<PfiLoss>,
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn entry(&self, feature: &str) -> Option<&ImportanceEntry> {
        self.entries
            .iter()
            .find(|e| e.features.len() == 1 && e.features[0] == feature)
    }

    /// Entries ordered by decreasing mean, ties kept in input order.
    pub fn ranked(&self) -> Vec<&ImportanceEntry> {
        let mut v: Vec<&ImportanceEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| b.mean.total_cmp(&a.mean));
        v
    }

    /// Combines reports of the same method computed on independent
    /// replications; each replicate contributes its mean as one value.
    pub fn across_replications(reports: &[ImportanceReport]) -> Result<ImportanceReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Empty("no replications to combine".into()))?;
        for r in reports {
            if r.method != first.method || r.loss != first.loss || r.entries.len() != first.entries.len() {
                return Err(Error::invalid("replications disagree on method, loss or entries"));
            }
            if r.entries.iter().zip(&first.entries).any(|(a, b)| a.features != b.features) {
                return Err(Error::invalid("replications disagree on feature order"));
            }
        }
        let entries = first
            .entries
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let values: Vec<f64> = reports.iter().map(|r| r.entries[k].mean).collect();
                let m = mean(&values);
                ImportanceEntry::from_values(e.features.clone(), values, m)
            })
            .collect();
        Ok(ImportanceReport {
            method: first.method,
            loss: first.loss,
            entries,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfiConfig {
    pub loss: PfiLoss,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for PfiConfig {
    fn default() -> Self {
        PfiConfig {
            loss: PfiLoss::LogLoss,
            repeats: DEFAULT_PFI_REPEATS,
            seed: 0,
        }
    }
}

/// Permutation importance on the test split when one is assigned, otherwise
/// on every row of `d`.
pub fn permutation_importance<C: Classifier + ?Sized>(
    model: &C,
    d: &DetectionDataset,
    config: &PfiConfig,
) -> Result<ImportanceReport> {
    let eval = match d.split {
        Some(_) => d.part(Split::Test)?,
        None => d.clone(),
    };
    model.check_schema(&eval.data)?;
    let n = eval.n_rows();
    if n < 2 {
        return Err(Error::invalid(format!(
            "permutation importance needs at least two rows, got {n}"
        )));
    }
    if config.repeats == 0 {
        return Err(Error::invalid("permutation importance needs at least one repeat"));
    }
    let loss = config.loss;
    let labels = &eval.labels;
    let avg_loss = |scores: &[f64]| -> f64 {
        scores.iter().zip(labels).map(|(&s, &y)| loss.row_loss(s, y)).sum::<f64>() / n as f64
    };
    let baseline = avg_loss(&model.predict_proba(&eval.data)?);

    let p = eval.data.n_cols();
    let tasks: Vec<(usize, usize)> = (0..p).flat_map(|j| (0..config.repeats).map(move |r| (j, r))).collect();
    let deltas: Vec<f64> = tasks
        .par_iter()
        .map(|&(j, r)| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng_for(config.seed, &[0x9F1, j as u64, r as u64]));
            let mut row = vec![0.0; p];
            let scores: Vec<f64> = (0..n)
                .map(|i| {
                    row.copy_from_slice(eval.data.row(i));
                    row[j] = eval.data.get(perm[i], j);
                    model.proba_row(&row)
                })
                .collect();
            avg_loss(&scores) - baseline
        })
        .collect();

    let names = eval.data.schema().names();
    let entries = deltas
        .chunks(config.repeats)
        .zip(names)
        .map(|(vals, name)| ImportanceEntry::from_values(vec![name], vals.to_vec(), mean(vals)))
        .collect();
    Ok(ImportanceReport {
        method: ImportanceMethod::Pfi,
        loss: Some(loss),
        entries,
    })
}

/// Mean absolute attribution per feature; `values` holds the per-instance
/// absolute attributions.
pub fn shap_importance(vectors: &[ShapleyVector]) -> Result<ImportanceReport> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Empty("no Shapley vectors to aggregate".into()))?;
    if vectors.iter().any(|v| v.features != first.features || v.values.len() != first.features.len()) {
        return Err(Error::invalid("Shapley vectors do not share one feature order"));
    }
    if vectors.iter().any(|v| v.scale != first.scale) {
        return Err(Error::invalid("Shapley vectors mix output scales"));
    }
    let entries = first
        .features
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let vals: Vec<f64> = vectors.iter().map(|v| v.values[j].abs()).collect();
            let m = mean(&vals);
            ImportanceEntry::from_values(vec![name.clone()], vals, m)
        })
        .collect();
    Ok(ImportanceReport {
        method: ImportanceMethod::MeanAbsShap,
        loss: None,
        entries,
    })
}

/// Signed degree-1 and degree-2 terms of one matrix: each diagonal entry,
/// then each unordered pair `i < j` carrying both symmetric halves.
pub fn interaction_terms(m: &InteractionMatrix) -> Vec<(Vec<usize>, f64)> {
    let p = m.values.len();
    let mut out: Vec<(Vec<usize>, f64)> = (0..p).map(|i| (vec![i], m.values[i][i])).collect();
    for i in 0..p {
        for j in i + 1..p {
            out.push((vec![i, j], m.values[i][j] + m.values[j][i]));
        }
    }
    out
}

const SYMMETRY_TOL: f64 = 1e-9;

/// Main and pairwise terms ranked by mean absolute value, at most `top_k`.
pub fn interaction_importance(matrices: &[InteractionMatrix], top_k: usize) -> Result<ImportanceReport> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Empty("no interaction matrices to aggregate".into()))?;
    for m in matrices {
        if m.features != first.features {
            return Err(Error::invalid("interaction matrices do not share one feature order"));
        }
        if m.values.len() != m.features.len() || !m.is_symmetric(SYMMETRY_TOL) {
            return Err(Error::invalid("interaction matrix is not square and symmetric"));
        }
    }
    let per_instance: Vec<Vec<(Vec<usize>, f64)>> = matrices.iter().map(interaction_terms).collect();
    let n_terms = per_instance[0].len();
    let mut entries: Vec<ImportanceEntry> = (0..n_terms)
        .map(|k| {
            let idx = &per_instance[0][k].0;
            let names = idx.iter().map(|&i| first.features[i].clone()).collect();
            let vals: Vec<f64> = per_instance.iter().map(|t| t[k].1.abs()).collect();
            let m = mean(&vals);
            ImportanceEntry::from_values(names, vals, m)
        })
        .collect();
    entries.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    entries.truncate(top_k);
    Ok(ImportanceReport {
        method: ImportanceMethod::Interaction,
        loss: None,
        entries,
    })
}

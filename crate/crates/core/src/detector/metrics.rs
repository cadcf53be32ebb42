use serde::{Deserialize, Serialize};

use super::gbdt::margin_log_loss;
use super::model::Classifier;
use crate::dataset::{DetectionDataset, Split};
use crate::error::{Error, Result};
use crate::math::{auc, logit};

/// Scores strictly above this are classified real; ties go to synthetic.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    /// Real rows classified real.
    pub tp: usize,
    /// Synthetic rows classified real.
    pub fp: usize,
    pub tn: usize,
    /// Real rows classified synthetic.
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub accuracy: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub log_loss: f64,
    /// Synthetic rows mistaken for real: the fidelity proxy.
    pub fpr: Option<f64>,
    /// Real rows mistaken for synthetic: the diversity proxy.
    pub fnr: Option<f64>,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub train: Option<SplitMetrics>,
    pub test: SplitMetrics,
}

pub fn classify(score: f64) -> u8 {
    u8::from(score > DECISION_THRESHOLD)
}

/// Metrics from precomputed probabilities of the real class.
pub fn score_metrics(scores: &[f64], labels: &[u8]) -> Result<SplitMetrics> {
    if scores.is_empty() {
        return Err(Error::Empty("no rows to evaluate".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (classify(s), y) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    let n = scores.len();
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    let log_loss = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| margin_log_loss(logit(s), y))
        .sum::<f64>()
        / n as f64;
    Ok(SplitMetrics {
        n,
        accuracy: (c.tp + c.tn) as f64 / n as f64,
        auc: auc(scores, labels),
        log_loss,
        fpr: ratio(c.fp, c.tn),
        fnr: ratio(c.fn_, c.tp),
        confusion: c,
    })
}

/// Train and test metrics of a detector on a split detection dataset.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, d: &DetectionDataset) -> Result<MetricsReport> {
    let scores = model.predict_proba(&d.data)?;
    let part = |which: Split| -> Result<Option<SplitMetrics>> {
        let idx = d.indices(which)?;
        if idx.is_empty() {
            return Ok(None);
        }
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let y: Vec<u8> = idx.iter().map(|&i| d.labels[i]).collect();
        score_metrics(&s, &y).map(Some)
    };
    let test = part(Split::Test)?.ok_or_else(|| Error::Empty("test split has no rows".into()))?;
    Ok(MetricsReport {
        train: part(Split::Train)?,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_scores() {
        let m = score_metrics(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(m.fpr, Some(0.0));
        assert_eq!(m.fnr, Some(0.0));
    }

    #[test]
    fn constant_half_ties_to_synthetic() {
        let m = score_metrics(&[0.5; 4], &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.auc, Some(0.5));
        assert_eq!(m.confusion.tn, 2);
        assert_eq!(m.fnr, Some(1.0));
        assert!((m.log_loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn all_real_predictions() {
        let m = score_metrics(&[0.9; 4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(m.fpr, Some(1.0));
        assert_eq!(m.fnr, Some(0.0));
    }

    #[test]
    fn empty_is_error() {
        assert!(score_metrics(&[], &[]).is_err());
    }
}

//! The real-vs-synthetic detection classifier, its baselines, metrics and tuner.

mod forest;
pub(crate) mod gbdt;
mod logistic;
mod metrics;
mod model;
mod tune;

use serde::{Deserialize, Serialize};

pub use forest::{ForestConfig, ForestModel};
pub use gbdt::{fit_gbdt, fit_gbdt_traced, FitTrace, TrainConfig};
pub use logistic::{LogisticModel, LOGISTIC_L2};
pub use metrics::{classify, evaluate, score_metrics, Confusion, MetricsReport, SplitMetrics, DECISION_THRESHOLD};
pub use model::{Classifier, OutputScale, TreeEnsembleModel};
pub use tune::{tune, tune_with, SearchStrategy, Trial, TuneResult, TunerConfig};

use crate::dataset::{DetectionDataset, Schema, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Logistic,
    RandomForest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineModel {
    Logistic(LogisticModel),
    RandomForest(ForestModel),
}

impl Classifier for BaselineModel {
    fn schema(&self) -> &Schema {
        match self {
            BaselineModel::Logistic(m) => m.schema(),
            BaselineModel::RandomForest(m) => m.schema(),
        }
    }

    fn proba_row(&self, row: &[f64]) -> f64 {
        match self {
            BaselineModel::Logistic(m) => m.proba_row(row),
            BaselineModel::RandomForest(m) => m.proba_row(row),
        }
    }

    fn log_odds_row(&self, row: &[f64]) -> f64 {
        match self {
            BaselineModel::Logistic(m) => m.log_odds_row(row),
            BaselineModel::RandomForest(m) => m.log_odds_row(row),
        }
    }
}

/// Fits a baseline detector on the training rows (all rows without a split).
pub fn fit_baseline(train: &DetectionDataset, kind: BaselineKind, seed: u64) -> Result<BaselineModel> {
    fit_baseline_with(train, kind, &ForestConfig::default(), seed)
}

pub fn fit_baseline_with(
    train: &DetectionDataset,
    kind: BaselineKind,
    forest: &ForestConfig,
    seed: u64,
) -> Result<BaselineModel> {
    let rows = match &train.split {
        Some(_) => train.indices(Split::Train)?,
        None => (0..train.n_rows()).collect(),
    };
    let n_real = rows.iter().filter(|&&r| train.labels[r] == 1).count();
    if n_real == 0 || n_real == rows.len() {
        return Err(Error::invalid("training data must contain both real and synthetic rows"));
    }
    Ok(match kind {
        BaselineKind::Logistic => BaselineModel::Logistic(LogisticModel::fit(&train.data, &train.labels, &rows)?),
        BaselineKind::RandomForest => {
            BaselineModel::RandomForest(ForestModel::fit(&train.data, &train.labels, &rows, forest, seed))
        }
    })
}

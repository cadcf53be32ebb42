use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbdt::TrainConfig;
use crate::dataset::{Schema, TabularDataset};
use crate::error::{Error, Result};
use crate::math::{logit, sigmoid};
use crate::tree::Tree;

/// Scale on which a model output (and any attribution of it) is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScale {
    Probability,
    LogOdds,
}

impl OutputScale {
    pub fn axis_label(self) -> &'static str {
        match self {
            OutputScale::Probability => "probability of real",
            OutputScale::LogOdds => "log-odds of real",
        }
    }
}

/// A fitted real-vs-synthetic detector `C: X -> [0, 1]`.
pub trait Classifier: Send + Sync {
    fn schema(&self) -> &Schema;

    /// Probability that the row is real.
    fn proba_row(&self, row: &[f64]) -> f64;

    fn log_odds_row(&self, row: &[f64]) -> f64 {
        logit(self.proba_row(row))
    }

    fn output(&self, row: &[f64], scale: OutputScale) -> f64 {
        match scale {
            OutputScale::Probability => self.proba_row(row),
            OutputScale::LogOdds => self.log_odds_row(row),
        }
    }

    fn check_schema(&self, d: &TabularDataset) -> Result<()> {
        if d.schema().fingerprint() != self.schema().fingerprint() {
            return Err(Error::SchemaMismatch(
                "dataset schema fingerprint differs from the model's".into(),
            ));
        }
        Ok(())
    }

    fn predict_proba(&self, d: &TabularDataset) -> Result<Vec<f64>> {
        self.check_schema(d)?;
        let p = d.n_cols();
        Ok(d.values().par_chunks(p).map(|r| self.proba_row(r)).collect())
    }

    fn predict_output(&self, d: &TabularDataset, scale: OutputScale) -> Result<Vec<f64>> {
        self.check_schema(d)?;
        let p = d.n_cols();
        Ok(d.values().par_chunks(p).map(|r| self.output(r, scale)).collect())
    }
}

impl<T: Classifier + ?Sized> Classifier for &T {
    fn schema(&self) -> &Schema {
        (**self).schema()
    }
    fn proba_row(&self, row: &[f64]) -> f64 {
        (**self).proba_row(row)
    }
    fn log_odds_row(&self, row: &[f64]) -> f64 {
        (**self).log_odds_row(row)
    }
}

impl<T: Classifier + ?Sized> Classifier for Box<T> {
    fn schema(&self) -> &Schema {
        (**self).schema()
    }
    fn proba_row(&self, row: &[f64]) -> f64 {
        (**self).proba_row(row)
    }
    fn log_odds_row(&self, row: &[f64]) -> f64 {
        (**self).log_odds_row(row)
    }
}

/// Additive ensemble of regression trees on the log-odds scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub schema_fingerprint: String,
    pub schema: Schema,
    pub config: TrainConfig,
    pub seed: u64,
}

impl TreeEnsembleModel {
    /// Wraps hand-built trees; `config` is informational.
    pub fn from_trees(schema: Schema, trees: Vec<Tree>, base_score: f64) -> Self {
        TreeEnsembleModel {
            trees,
            base_score,
            schema_fingerprint: schema.fingerprint(),
            schema,
            config: TrainConfig::default(),
            seed: 0,
        }
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + t.predict(row))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: TreeEnsembleModel = serde_json::from_str(text)?;
        if m.schema.fingerprint() != m.schema_fingerprint {
            return Err(Error::SchemaMismatch(
                "model dump fingerprint does not match its schema".into(),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Classifier for TreeEnsembleModel {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn proba_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }

    fn log_odds_row(&self, row: &[f64]) -> f64 {
        self.margin(row)
    }
}

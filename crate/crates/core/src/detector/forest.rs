use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::Classifier;
use crate::cart::{fit_cart, CartConfig, CartTask};
use crate::dataset::{Schema, TabularDataset};
use crate::rng::rng_for;
use crate::tree::Tree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means the square root of the column count.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            max_depth: 16,
            min_leaf: 1,
            max_features: None,
            bootstrap: true,
        }
    }
}

/// Bagged Gini trees; the score is the mean leaf fraction of real rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    schema: Schema,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn fit(data: &TabularDataset, labels: &[u8], rows: &[usize], cfg: &ForestConfig, seed: u64) -> Self {
        let p = data.n_cols();
        let m = cfg
            .max_features
            .unwrap_or_else(|| ((p as f64).sqrt().round() as usize).max(1))
            .min(p);
        let cart = CartConfig {
            max_depth: cfg.max_depth,
            min_leaf: cfg.min_leaf.max(1),
            max_features: Some(m),
        };
        let target: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let features: Vec<usize> = (0..p).collect();
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(seed, &[0xF0, t as u64]);
                let sample: Vec<usize> = if cfg.bootstrap {
                    (0..rows.len()).map(|_| rows[rng.gen_range(0..rows.len())]).collect()
                } else {
                    rows.to_vec()
                };
                fit_cart(
                    data,
                    &features,
                    &target,
                    CartTask::Classification { n_classes: 2 },
                    &sample,
                    &cart,
                    &mut rng,
                )
                .tree
            })
            .collect();
        ForestModel {
            schema: data.schema().clone(),
            trees,
        }
    }
}

impl Classifier for ForestModel {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn proba_row(&self, row: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.5;
        }
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Provenance, TabularDataset};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Real and synthetic rows stacked with labels (1 = real, 0 = synthetic).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionDataset {
    pub data: TabularDataset,
    pub labels: Vec<u8>,
    pub split: Option<Vec<Split>>,
    pub seed: u64,
}

impl DetectionDataset {
    pub fn new(data: TabularDataset, labels: Vec<u8>, seed: u64) -> Result<Self> {
        if labels.len() != data.n_rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                data.n_rows()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(DetectionDataset {
            data,
            labels,
            split: None,
            seed,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    /// `(n_synthetic, n_real)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let real = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - real, real)
    }

    pub fn indices(&self, which: Split) -> Result<Vec<usize>> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no train/test assignment"))?;
        Ok((0..self.n_rows()).filter(|&i| split[i] == which).collect())
    }

    /// Rows of one split, labels kept, split assignment dropped.
    pub fn part(&self, which: Split) -> Result<DetectionDataset> {
        let idx = self.indices(which)?;
        Ok(self.select(&idx))
    }

    pub fn select(&self, idx: &[usize]) -> DetectionDataset {
        DetectionDataset {
            data: self.data.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            split: self
                .split
                .as_ref()
                .map(|s| idx.iter().map(|&i| s[i]).collect()),
            seed: self.seed,
        }
    }

    /// Rows carrying the given label.
    pub fn rows_with_label(&self, label: u8) -> TabularDataset {
        let idx: Vec<usize> = (0..self.n_rows()).filter(|&i| self.labels[i] == label).collect();
        let prov = if label == 1 {
            Provenance::Real
        } else {
            Provenance::Synthetic
        };
        self.data.select_rows(&idx).with_provenance(prov)
    }
}

/// Stacks real and synthetic data with labels, downsampling the larger side
/// without replacement so both classes have equal counts.
pub fn build_detection_dataset(
    real: &TabularDataset,
    synthetic: &TabularDataset,
    seed: u64,
) -> Result<DetectionDataset> {
    if real.is_empty() {
        return Err(Error::Empty("real dataset has no rows".into()));
    }
    if synthetic.is_empty() {
        return Err(Error::Empty("synthetic dataset has no rows".into()));
    }
    let schema = real.schema().union(synthetic.schema())?;
    let real = real.conform_to(&schema)?;
    let synthetic = synthetic.conform_to(&schema)?;
    let n = real.n_rows().min(synthetic.n_rows());

    let pick = |d: &TabularDataset, stream: u64| -> TabularDataset {
        if d.n_rows() == n {
            return d.clone();
        }
        let mut idx: Vec<usize> = (0..d.n_rows()).collect();
        idx.shuffle(&mut rng_for(seed, &[0xD0_55, stream]));
        idx.truncate(n);
        idx.sort_unstable();
        d.select_rows(&idx)
    };
    let real = pick(&real, 1);
    let synthetic = pick(&synthetic, 0);
    let data = TabularDataset::concat(&[&real, &synthetic], Provenance::Unlabeled)?;
    let mut labels = vec![1u8; n];
    labels.extend(std::iter::repeat_n(0u8, n));
    DetectionDataset::new(data, labels, seed)
}

/// Label-stratified train/test assignment.
pub fn train_test_split(d: &DetectionDataset, test_fraction: f64, seed: u64) -> Result<DetectionDataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut split = vec![Split::Train; d.n_rows()];
    let mut by_class: Vec<Vec<usize>> = Vec::with_capacity(2);
    for label in [0u8, 1u8] {
        let idx: Vec<usize> = (0..d.n_rows()).filter(|&i| d.labels[i] == label).collect();
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "class {label} has {} rows; at least 2 are needed to split",
                idx.len()
            )));
        }
        by_class.push(idx);
    }
    // largest-remainder allocation so the total is round(fraction * n)
    let total = (test_fraction * d.n_rows() as f64).round() as usize;
    let quotas: Vec<f64> = by_class.iter().map(|c| test_fraction * c.len() as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..2).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let mut k = 0;
    while counts.iter().sum::<usize>() < total && k < order.len() {
        counts[order[k]] += 1;
        k += 1;
    }
    for (label, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut rng_for(seed, &[0x5_9117, label as u64]));
        let n_test = counts[label].clamp(1, idx.len() - 1);
        for &i in &idx[..n_test] {
            split[i] = Split::Test;
        }
    }
    Ok(DetectionDataset {
        split: Some(split),
        seed,
        ..d.clone()
    })
}

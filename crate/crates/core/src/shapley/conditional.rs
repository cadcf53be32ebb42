//! Conditional sampling of absent features given present ones, via
//! significance-gated recursive partitioning of the reference data.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::cart::{fit_cart, CartConfig, CartTask};
use crate::dataset::{ColumnKind, TabularDataset, UNKNOWN_CODE};
use crate::math::{quantile_sorted, sorted_copy};
use crate::rng::{rng_for, Rng};
use crate::tree::SplitRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionalConfig {
    pub max_depth: usize,
    pub min_cell_rows: usize,
    /// Family-wise significance level for accepting a split.
    pub alpha: f64,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        ConditionalConfig {
            max_depth: 4,
            min_cell_rows: 20,
            alpha: 0.05,
        }
    }
}

#[derive(Debug)]
enum Cell {
    Split {
        feature: usize,
        rule: SplitRule,
        default_left: bool,
        left: Box<Cell>,
        right: Box<Cell>,
    },
    Leaf {
        rows: Vec<usize>,
    },
}

impl Cell {
    fn locate(&self, instance: &[f64]) -> &[usize] {
        match self {
            Cell::Leaf { rows } => rows,
            Cell::Split {
                feature,
                rule,
                default_left,
                left,
                right,
            } => {
                if rule.route(instance[*feature]).unwrap_or(*default_left) {
                    left.locate(instance)
                } else {
                    right.locate(instance)
                }
            }
        }
    }

    fn n_leaves(&self) -> usize {
        match self {
            Cell::Leaf { .. } => 1,
            Cell::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

/// Draws reference rows that resemble an instance on a coalition of features.
#[derive(Debug)]
pub struct ConditionalSampler {
    data: TabularDataset,
    config: ConditionalConfig,
    cache: Mutex<HashMap<u64, Arc<Cell>>>,
}

/// Codes used by the association tests: categorical codes as-is, numerics
/// binned into quartiles.
fn discretize(values: &[f64], kind: ColumnKind) -> (Vec<usize>, usize) {
    match kind {
        ColumnKind::Categorical => {
            let mut map: HashMap<i64, usize> = HashMap::new();
            let codes = values
                .iter()
                .map(|&v| {
                    let next = map.len();
                    *map.entry(v as i64).or_insert(next)
                })
                .collect();
            (codes, map.len())
        }
        ColumnKind::Numeric => {
            let sorted = sorted_copy(values);
            let mut cuts: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|&q| quantile_sorted(&sorted, q)).collect();
            cuts.dedup();
            let codes: Vec<usize> = values.iter().map(|&v| cuts.partition_point(|&c| c < v)).collect();
            let k = codes.iter().copied().max().unwrap_or(0) + 1;
            (codes, k)
        }
    }
}

/// p-value of a one-way ANOVA of `y` across `groups`.
fn anova_p(y: &[f64], groups: &[usize], k: usize) -> f64 {
    let n = y.len();
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0.0; k];
    for (&v, &g) in y.iter().zip(groups) {
        sum[g] += v;
        cnt[g] += 1.0;
    }
    let used: Vec<usize> = (0..k).filter(|&g| cnt[g] > 0.0).collect();
    let k_eff = used.len();
    if k_eff < 2 || n <= k_eff {
        return 1.0;
    }
    let grand = y.iter().sum::<f64>() / n as f64;
    let ss_between: f64 = used.iter().map(|&g| cnt[g] * (sum[g] / cnt[g] - grand).powi(2)).sum();
    let ss_within: f64 = y.iter().zip(groups).map(|(&v, &g)| (v - sum[g] / cnt[g]).powi(2)).sum();
    let (d1, d2) = ((k_eff - 1) as f64, (n - k_eff) as f64);
    if ss_within <= 0.0 {
        return if ss_between > 0.0 { 0.0 } else { 1.0 };
    }
    let f = (ss_between / d1) / (ss_within / d2);
    match FisherSnedecor::new(d1, d2) {
        Ok(dist) => dist.sf(f),
        Err(_) => 1.0,
    }
}

/// p-value of Pearson's chi-square test of independence.
fn chi_square_p(a: &[usize], ka: usize, b: &[usize], kb: usize) -> f64 {
    let n = a.len() as f64;
    let mut table = vec![vec![0.0; kb]; ka];
    for (&i, &j) in a.iter().zip(b) {
        table[i][j] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let r_used = rows.iter().filter(|&&v| v > 0.0).count();
    let c_used = cols.iter().filter(|&&v| v > 0.0).count();
    if r_used < 2 || c_used < 2 {
        return 1.0;
    }
    let mut stat = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let e = rows[i] * cols[j] / n;
            if e > 0.0 {
                stat += (table[i][j] - e).powi(2) / e;
            }
        }
    }
    let df = ((r_used - 1) * (c_used - 1)) as f64;
    match ChiSquared::new(df) {
        Ok(dist) => dist.sf(stat),
        Err(_) => 1.0,
    }
}

impl ConditionalSampler {
    pub fn fit(data: &TabularDataset, config: ConditionalConfig) -> crate::Result<Self> {
        if data.is_empty() {
            return Err(crate::Error::Empty("conditional sampler needs reference rows".into()));
        }
        if !(config.alpha > 0.0 && config.alpha < 1.0) || config.min_cell_rows == 0 {
            return Err(crate::Error::invalid(
                "conditional sampler needs alpha in (0, 1) and min_cell_rows >= 1",
            ));
        }
        Ok(ConditionalSampler {
            data: data.clone(),
            config,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn data(&self) -> &TabularDataset {
        &self.data
    }

    pub fn config(&self) -> &ConditionalConfig {
        &self.config
    }

    /// Association p-value between a conditioning column and a response column.
    fn association(&self, rows: &[usize], cond: usize, resp: usize) -> f64 {
        let schema = self.data.schema();
        let x: Vec<f64> = rows.iter().map(|&r| self.data.get(r, cond)).collect();
        let y: Vec<f64> = rows.iter().map(|&r| self.data.get(r, resp)).collect();
        let (xc, kx) = discretize(&x, schema.column(cond).kind);
        match schema.column(resp).kind {
            ColumnKind::Numeric => anova_p(&y, &xc, kx),
            ColumnKind::Categorical => {
                let (yc, ky) = discretize(&y, ColumnKind::Categorical);
                chi_square_p(&xc, kx, &yc, ky)
            }
        }
    }

    fn grow(&self, rows: Vec<usize>, present: &[usize], absent: &[usize], depth: usize) -> Cell {
        let min = self.config.min_cell_rows;
        if depth >= self.config.max_depth || rows.len() < 2 * min || absent.is_empty() {
            return Cell::Leaf { rows };
        }
        let n_tests = (present.len() * absent.len()) as f64;
        let mut best: Option<(f64, usize, usize)> = None;
        for &c in present {
            for &r in absent {
                let p = (self.association(&rows, c, r) * n_tests).min(1.0);
                if best.is_none_or(|b| p < b.0) {
                    best = Some((p, c, r));
                }
            }
        }
        let Some((p, cond, resp)) = best else {
            return Cell::Leaf { rows };
        };
        if p >= self.config.alpha {
            return Cell::Leaf { rows };
        }
        let schema = self.data.schema();
        let (target, task): (Vec<f64>, CartTask) = match schema.column(resp).kind {
            ColumnKind::Numeric => (self.data.column(resp), CartTask::Regression),
            ColumnKind::Categorical => {
                let k = schema.column(resp).n_categories();
                let t = self
                    .data
                    .column(resp)
                    .into_iter()
                    .map(|v| if v == UNKNOWN_CODE { k as f64 } else { v })
                    .collect();
                (t, CartTask::Classification { n_classes: k + 1 })
            }
        };
        let cfg = CartConfig {
            max_depth: 1,
            min_leaf: min,
            max_features: None,
        };
        let mut unused_rng = rng_for(0, &[]);
        let fit = fit_cart(&self.data, &[cond], &target, task, &rows, &cfg, &mut unused_rng);
        let crate::tree::Node::Internal {
            rule, default_left, ..
        } = fit.tree.nodes[0].clone()
        else {
            return Cell::Leaf { rows };
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| rule.route(self.data.get(i, cond)).unwrap_or(default_left));
        Cell::Split {
            feature: cond,
            rule,
            default_left,
            left: Box::new(self.grow(l, present, absent, depth + 1)),
            right: Box::new(self.grow(r, present, absent, depth + 1)),
        }
    }

    fn partition(&self, mask: u64) -> Arc<Cell> {
        if let Some(c) = self.cache.lock().get(&mask) {
            return Arc::clone(c);
        }
        let p = self.data.n_cols();
        let present: Vec<usize> = (0..p).filter(|&j| mask >> j & 1 == 1).collect();
        let absent: Vec<usize> = (0..p).filter(|&j| mask >> j & 1 == 0).collect();
        let all: Vec<usize> = (0..self.data.n_rows()).collect();
        let cell = if present.is_empty() {
            Cell::Leaf { rows: all }
        } else {
            self.grow(all, &present, &absent, 0)
        };
        let cell = Arc::new(cell);
        Arc::clone(self.cache.lock().entry(mask).or_insert(cell))
    }

    /// Number of cells the partition for a coalition has.
    pub fn n_cells(&self, mask: u64) -> usize {
        self.partition(mask).n_leaves()
    }

    /// Indices of reference rows drawn with replacement from the cell that
    /// `instance` falls into for coalition `mask`; the whole reference set
    /// is used when that cell is too small.
    pub fn draw(&self, mask: u64, instance: &[f64], n: usize, rng: &mut Rng) -> Vec<usize> {
        let part = self.partition(mask);
        let cell = part.locate(instance);
        if cell.len() < self.config.min_cell_rows {
            let total = self.data.n_rows();
            return (0..n).map(|_| rng.gen_range(0..total)).collect();
        }
        (0..n).map(|_| cell[rng.gen_range(0..cell.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anova_detects_group_shift() {
        let y: Vec<f64> = (0..100).map(|i| if i < 50 { 0.0 } else { 1.0 } + (i % 7) as f64 * 0.01).collect();
        let g: Vec<usize> = (0..100).map(|i| usize::from(i >= 50)).collect();
        assert!(anova_p(&y, &g, 2) < 1e-6);
        let g2: Vec<usize> = (0..100).map(|i| i % 2).collect();
        assert!(anova_p(&y, &g2, 2) > 0.05);
    }

    #[test]
    fn chi_square_on_identical_codes() {
        let a: Vec<usize> = (0..60).map(|i| i % 3).collect();
        assert!(chi_square_p(&a, 3, &a, 3) < 1e-6);
        let b: Vec<usize> = (0..60).map(|i| (i / 3) % 2).collect();
        assert!(chi_square_p(&a, 3, &b, 2) > 0.05);
    }
}

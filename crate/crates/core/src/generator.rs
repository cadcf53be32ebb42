//! Autoregressive tree-chain synthesizer. Each column is drawn from the
//! training values in the leaf its predecessors route to, so every sampled
//! cell is a value seen in training.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{fit_cart, CartConfig, CartTask};
use crate::dataset::{is_known_code, ColumnKind, Provenance, TabularDataset, UNKNOWN_CODE};
use crate::error::{Error, Result};
use crate::math::sorted_copy;
use crate::rng::{rng_for, Rng};
use crate::tree::Tree;

const MI_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Product of the empirical marginals.
    Independent,
    #[default]
    CartChain,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnOrder {
    /// Columns sharing the most information with the others come first.
    #[default]
    MutualInformation,
    Given(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    pub order: ColumnOrder,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            mode: SamplerMode::CartChain,
            order: ColumnOrder::MutualInformation,
            max_depth: 8,
            min_leaf: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub column: usize,
    pub name: String,
    /// Absent for marginal steps.
    pub tree: Option<Tree>,
    /// Training values reaching each leaf, keyed by leaf node id; a marginal
    /// step keeps its single pool under key 0.
    pub pools: BTreeMap<usize, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    pub schema: crate::dataset::Schema,
    pub mode: SamplerMode,
    pub steps: Vec<ChainStep>,
}

fn quantile_codes(values: &[f64], bins: usize) -> Vec<usize> {
    let sorted = sorted_copy(values);
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..bins).map(|k| sorted[(k * n / bins).min(n - 1)]).collect();
    cuts.dedup();
    values.iter().map(|&v| cuts.partition_point(|&c| c <= v)).collect()
}

fn column_codes(d: &TabularDataset, j: usize) -> Vec<usize> {
    let col = d.column(j);
    match d.schema().column(j).kind {
        ColumnKind::Numeric => quantile_codes(&col, MI_BINS),
        ColumnKind::Categorical => {
            let mut map: HashMap<i64, usize> = HashMap::new();
            col.iter()
                .map(|&v| {
                    let next = map.len();
                    *map.entry(v as i64).or_insert(next)
                })
                .collect()
        }
    }
}

fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *pa.entry(x).or_insert(0.0) += 1.0;
        *pb.entry(y).or_insert(0.0) += 1.0;
    }
    joint
        .iter()
        .map(|(&(x, y), &c)| (c / n) * (c * n / (pa[&x] * pb[&y])).ln())
        .sum()
}

/// Column indices ordered by decreasing summed mutual information with the
/// other columns, ties by position.
pub fn mutual_information_order(d: &TabularDataset) -> Vec<usize> {
    let p = d.n_cols();
    let codes: Vec<Vec<usize>> = (0..p).map(|j| column_codes(d, j)).collect();
    let mut score = vec![0.0; p];
    for a in 0..p {
        for b in a + 1..p {
            let mi = mutual_information(&codes[a], &codes[b]);
            score[a] += mi;
            score[b] += mi;
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    order
}

fn resolve_order(d: &TabularDataset, order: &ColumnOrder) -> Result<Vec<usize>> {
    match order {
        ColumnOrder::MutualInformation => Ok(mutual_information_order(d)),
        ColumnOrder::Given(names) => {
            let idx: Vec<usize> = names.iter().map(|n| d.schema().require(n)).collect::<Result<_>>()?;
            let mut seen = vec![false; d.n_cols()];
            for &j in &idx {
                if std::mem::replace(&mut seen[j], true) {
                    return Err(Error::invalid(format!(
                        "column `{}` listed twice in chain order",
                        d.schema().column(j).name
                    )));
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::invalid("chain order must list every column exactly once"));
            }
            Ok(idx)
        }
    }
}

pub fn fit_chain(data: &TabularDataset, config: &SamplerConfig) -> Result<ChainModel> {
    if data.is_empty() {
        return Err(Error::Empty("cannot fit a synthesizer on zero rows".into()));
    }
    if config.max_depth == 0 || config.min_leaf == 0 {
        return Err(Error::invalid("synthesizer needs max_depth >= 1 and min_leaf >= 1"));
    }
    if data.n_rows() < config.min_leaf {
        return Err(Error::invalid(format!(
            "{} rows is fewer than min_leaf = {}",
            data.n_rows(),
            config.min_leaf
        )));
    }
    let order = resolve_order(data, &config.order)?;
    let schema = data.schema();
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    let cart_cfg = CartConfig {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        max_features: None,
    };
    let steps = order
        .iter()
        .enumerate()
        .map(|(pos, &j)| {
            let values = data.column(j);
            let name = schema.column(j).name.clone();
            if pos == 0 || config.mode == SamplerMode::Independent {
                return ChainStep {
                    column: j,
                    name,
                    tree: None,
                    pools: BTreeMap::from([(0, values)]),
                };
            }
            let (target, task) = match schema.column(j).kind {
                ColumnKind::Numeric => (values.clone(), CartTask::Regression),
                ColumnKind::Categorical => {
                    let k = schema.column(j).n_categories();
                    let t = values.iter().map(|&v| if v == UNKNOWN_CODE { k as f64 } else { v }).collect();
                    (t, CartTask::Classification { n_classes: k + 1 })
                }
            };
            let mut rng = rng_for(config.seed, &[0xC4A, j as u64]);
            let fit = fit_cart(data, &order[..pos], &target, task, &rows, &cart_cfg, &mut rng);
            let pools = fit
                .leaf_rows
                .iter()
                .enumerate()
                .filter(|(_, r)| !r.is_empty())
                .map(|(node, r)| (node, r.iter().map(|&i| values[i]).collect()))
                .collect();
            ChainStep {
                column: j,
                name,
                tree: Some(fit.tree),
                pools,
            }
        })
        .collect();
    Ok(ChainModel {
        schema: schema.clone(),
        mode: config.mode,
        steps,
    })
}

impl ChainStep {
    /// Pool a partially filled row draws this column from.
    fn pool(&self, row: &[f64]) -> &[f64] {
        let leaf = self.tree.as_ref().map_or(0, |t| t.leaf_index(row));
        &self.pools[&leaf]
    }
}

impl ChainModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    /// Every value the chain can emit for column `j`.
    pub fn support(&self, j: usize) -> Vec<f64> {
        let step = self.steps.iter().find(|s| s.column == j).expect("chain covers every column");
        let mut v: Vec<f64> = step.pools.values().flatten().copied().collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn check_fixed(&self, fixed: &[Option<f64>]) -> Result<()> {
        if fixed.len() != self.n_cols() {
            return Err(Error::SchemaMismatch(format!(
                "fixed instance has {} cells, chain has {} columns",
                fixed.len(),
                self.n_cols()
            )));
        }
        for (j, v) in fixed.iter().enumerate() {
            let Some(v) = *v else { continue };
            let col = self.schema.column(j);
            let ok = match col.kind {
                ColumnKind::Numeric => v.is_finite(),
                ColumnKind::Categorical => v == UNKNOWN_CODE || is_known_code(v, col.n_categories()),
            };
            if !ok {
                return Err(Error::invalid(format!("fixed value {v} is not valid for column `{}`", col.name)));
            }
        }
        Ok(())
    }

    /// One row: fixed cells are copied, the rest drawn in chain order.
    pub fn sample_row(&self, fixed: &[Option<f64>], rng: &mut Rng) -> Vec<f64> {
        let mut row = vec![0.0; self.n_cols()];
        for step in &self.steps {
            row[step.column] = match fixed[step.column] {
                Some(v) => v,
                None => {
                    let pool = step.pool(&row);
                    pool[rng.gen_range(0..pool.len())]
                }
            };
        }
        row
    }

    /// `n` rows, row `i` drawn with its own derived stream.
    pub fn sample(&self, n: usize, seed: u64, fixed: Option<&[Option<f64>]>) -> Result<TabularDataset> {
        let free = vec![None; self.n_cols()];
        let fixed = fixed.unwrap_or(&free);
        self.check_fixed(fixed)?;
        let values: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| self.sample_row(fixed, &mut rng_for(seed, &[0x5A, i as u64])))
            .collect();
        if n == 0 {
            return Ok(TabularDataset::empty(self.schema.clone(), Provenance::Synthetic));
        }
        TabularDataset::new(self.schema.clone(), values, Provenance::Synthetic)
    }
}

/// Fits a chain on `real` with default depth and leaf size and draws `n` rows.
pub fn baseline_synthesize(real: &TabularDataset, mode: SamplerMode, n: usize, seed: u64) -> Result<TabularDataset> {
    let config = SamplerConfig {
        mode,
        seed,
        ..SamplerConfig::default()
    };
    fit_chain(real, &config)?.sample(n, seed, None)
}

//! Second-order gradient boosting on binary log-loss with histogram split
//! finding and native categorical subset splits.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::TreeEnsembleModel;
use crate::dataset::{ColumnKind, DetectionDataset, Split, TabularDataset, UNKNOWN_CODE};
use crate::error::{Error, Result};
use crate::math::{logit, sigmoid};
use crate::rng::rng_for;
use crate::tree::{Node, SplitRule, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub l1: f64,
    pub l2: f64,
    pub subsample: f64,
    pub colsample: f64,
    /// Rounds without validation improvement before stopping; 0 disables.
    pub early_stopping_rounds: usize,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 300,
            max_depth: 6,
            learning_rate: 0.1,
            min_child_weight: 1.0,
            l1: 0.0,
            l2: 1.0,
            subsample: 1.0,
            colsample: 1.0,
            early_stopping_rounds: 20,
            max_bins: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("train config: {what}")));
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.min_child_weight >= 0.0) || !(self.l1 >= 0.0) || !(self.l2 >= 0.0) {
            return bad("min_child_weight, l1 and l2 must be non-negative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) || !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return bad("subsample rates must lie in (0, 1]");
        }
        if self.max_bins < 2 || self.max_bins > u16::MAX as usize {
            return bad("max_bins must lie in [2, 65535]");
        }
        Ok(())
    }
}

/// Per-round losses recorded while fitting.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitTrace {
    /// Mean log-loss on the rows used for fitting; entry 0 is the intercept-only model.
    pub train_loss: Vec<f64>,
    /// Mean log-loss on the early-stopping slice (empty when disabled).
    pub valid_loss: Vec<f64>,
    pub n_trees: usize,
}

enum FeatureBins {
    Numeric { edges: Vec<f64> },
    Categorical { n_categories: usize },
}

struct BinnedFeature {
    bins: Vec<u16>,
    n_bins: usize,
    kind: FeatureBins,
}

fn bin_features(data: &TabularDataset, rows: &[usize], max_bins: usize) -> Vec<BinnedFeature> {
    (0..data.n_cols())
        .into_par_iter()
        .map(|j| {
            let col = data.schema().column(j);
            match col.kind {
                ColumnKind::Categorical => {
                    let k = col.n_categories();
                    let bins = rows
                        .iter()
                        .map(|&i| {
                            let v = data.get(i, j);
                            if v == UNKNOWN_CODE {
                                k as u16
                            } else {
                                v as u16
                            }
                        })
                        .collect();
                    BinnedFeature {
                        bins,
                        n_bins: k + 1,
                        kind: FeatureBins::Categorical { n_categories: k },
                    }
                }
                ColumnKind::Numeric => {
                    let mut vals: Vec<f64> = rows.iter().map(|&i| data.get(i, j)).collect();
                    vals.sort_by(f64::total_cmp);
                    let mut distinct = vals.clone();
                    distinct.dedup();
                    let edges: Vec<f64> = if distinct.len() <= max_bins {
                        distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
                    } else {
                        let mut e: Vec<f64> = (1..max_bins)
                            .map(|k| vals[(k * vals.len()) / max_bins])
                            .collect();
                        e.dedup();
                        // the lowest edge must leave something on its left
                        if e.first() == Some(&distinct[0]) {
                            e.remove(0);
                        }
                        e
                    };
                    let bins = rows
                        .iter()
                        .map(|&i| edges.partition_point(|&e| e <= data.get(i, j)) as u16)
                        .collect();
                    BinnedFeature {
                        bins,
                        n_bins: edges.len() + 1,
                        kind: FeatureBins::Numeric { edges },
                    }
                }
            }
        })
        .collect()
}

#[derive(Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
}

impl std::ops::AddAssign for Stats {
    fn add_assign(&mut self, o: Stats) {
        self.g += o.g;
        self.h += o.h;
    }
}

impl std::ops::Sub for Stats {
    type Output = Stats;
    fn sub(self, o: Stats) -> Stats {
        Stats {
            g: self.g - o.g,
            h: self.h - o.h,
        }
    }
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

struct Candidate {
    feature: usize,
    gain: f64,
    rule: BinRule,
    default_left: bool,
}

enum BinRule {
    /// Bins `0..=bin` go left.
    UpTo(usize),
    Subset(Vec<u32>),
}

struct Grower<'a> {
    features: &'a [BinnedFeature],
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a TrainConfig,
    allowed: Vec<usize>,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn score(&self, s: Stats) -> f64 {
        let t = soft_threshold(s.g, self.cfg.l1);
        t * t / (s.h + self.cfg.l2)
    }

    fn leaf_value(&self, s: Stats) -> f64 {
        let denom = s.h + self.cfg.l2;
        if denom <= 0.0 {
            return 0.0;
        }
        -self.cfg.learning_rate * soft_threshold(s.g, self.cfg.l1) / denom
    }

    fn best_for_feature(&self, f: usize, rows: &[usize], total: Stats) -> Option<Candidate> {
        let feat = &self.features[f];
        let mut hist = vec![Stats::default(); feat.n_bins];
        for &r in rows {
            hist[feat.bins[r] as usize] += Stats {
                g: self.grad[r],
                h: self.hess[r],
            };
        }
        let mcw = self.cfg.min_child_weight;
        let parent = self.score(total);
        let mut best: Option<Candidate> = None;
        let consider = |gain: f64, rule: BinRule, default_left: bool, best: &mut Option<Candidate>| {
            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                *best = Some(Candidate {
                    feature: f,
                    gain,
                    rule,
                    default_left,
                });
            }
        };
        match &feat.kind {
            FeatureBins::Numeric { .. } => {
                let mut left = Stats::default();
                for b in 0..feat.n_bins.saturating_sub(1) {
                    left += hist[b];
                    let right = total - left;
                    if left.h < mcw || right.h < mcw || left.h <= 0.0 || right.h <= 0.0 {
                        continue;
                    }
                    let gain = 0.5 * (self.score(left) + self.score(right) - parent);
                    consider(gain, BinRule::UpTo(b), left.h >= right.h, &mut best);
                }
            }
            FeatureBins::Categorical { n_categories } => {
                let k = *n_categories;
                let unknown = hist[k];
                let mut cats: Vec<usize> = (0..k).filter(|&c| hist[c].h > 0.0).collect();
                if cats.len() < 2 {
                    return None;
                }
                let l2 = self.cfg.l2;
                cats.sort_by(|&a, &b| {
                    let ra = hist[a].g / (hist[a].h + l2);
                    let rb = hist[b].g / (hist[b].h + l2);
                    ra.total_cmp(&rb).then(a.cmp(&b))
                });
                let known = total - unknown;
                let mut left = Stats::default();
                for m in 0..cats.len() - 1 {
                    left += hist[cats[m]];
                    let right = known - left;
                    let default_left = left.h >= right.h;
                    let (l, r) = if default_left {
                        let mut l = left;
                        l += unknown;
                        (l, right)
                    } else {
                        let mut r = right;
                        r += unknown;
                        (left, r)
                    };
                    if l.h < mcw || r.h < mcw || l.h <= 0.0 || r.h <= 0.0 {
                        continue;
                    }
                    let gain = 0.5 * (self.score(l) + self.score(r) - parent);
                    if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                        let mut subset: Vec<u32> = cats[..=m].iter().map(|&c| c as u32).collect();
                        subset.sort_unstable();
                        consider(gain, BinRule::Subset(subset), default_left, &mut best);
                    }
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let mut total = Stats::default();
        for &r in &rows {
            total += Stats {
                g: self.grad[r],
                h: self.hess[r],
            };
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(total),
            cover: total.h,
        });
        if depth >= self.cfg.max_depth || rows.len() < 2 || total.h < 2.0 * self.cfg.min_child_weight {
            return id;
        }
        let candidates: Vec<Option<Candidate>> = self
            .allowed
            .par_iter()
            .map(|&f| self.best_for_feature(f, &rows, total))
            .collect();
        let mut best: Option<Candidate> = None;
        for c in candidates.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        let Some(best) = best else { return id };

        let feat = &self.features[best.feature];
        let goes_left = |r: usize| -> bool {
            let b = feat.bins[r] as usize;
            match (&best.rule, &feat.kind) {
                (BinRule::UpTo(t), _) => b <= *t,
                (BinRule::Subset(s), FeatureBins::Categorical { n_categories }) => {
                    if b == *n_categories {
                        best.default_left
                    } else {
                        s.binary_search(&(b as u32)).is_ok()
                    }
                }
                (BinRule::Subset(_), FeatureBins::Numeric { .. }) => unreachable!(),
            }
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| goes_left(r));
        let rule = match (&best.rule, &feat.kind) {
            (BinRule::UpTo(t), FeatureBins::Numeric { edges }) => SplitRule::Numeric { threshold: edges[*t] },
            (BinRule::Subset(s), _) => SplitRule::Categorical { left: s.clone() },
            (BinRule::UpTo(_), FeatureBins::Categorical { .. }) => unreachable!(),
        };
        drop(rows);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Internal {
            feature: best.feature,
            rule,
            left,
            right,
            default_left: best.default_left,
            cover: total.h,
        };
        id
    }
}

/// Numerically stable binary log-loss from a log-odds margin.
pub(crate) fn margin_log_loss(margin: f64, y: u8) -> f64 {
    let softplus = if margin > 0.0 {
        margin + (-margin).exp().ln_1p()
    } else {
        margin.exp().ln_1p()
    };
    softplus - if y == 1 { margin } else { 0.0 }
}

fn mean_loss(margins: &[f64], labels: &[u8], rows: &[usize]) -> f64 {
    rows.iter().map(|&r| margin_log_loss(margins[r], labels[r])).sum::<f64>() / rows.len() as f64
}

fn training_rows(train: &DetectionDataset) -> Result<Vec<usize>> {
    match &train.split {
        Some(_) => train.indices(Split::Train),
        None => Ok((0..train.n_rows()).collect()),
    }
}

/// Fits the boosted detector on the training rows of `train` (all rows when
/// no split is assigned).
pub fn fit_gbdt(train: &DetectionDataset, config: &TrainConfig) -> Result<TreeEnsembleModel> {
    fit_gbdt_traced(train, config).map(|(m, _)| m)
}

pub fn fit_gbdt_traced(train: &DetectionDataset, config: &TrainConfig) -> Result<(TreeEnsembleModel, FitTrace)> {
    config.validate()?;
    let rows = training_rows(train)?;
    let labels = &train.labels;
    let n_real = rows.iter().filter(|&&r| labels[r] == 1).count();
    if n_real == 0 || n_real == rows.len() {
        return Err(Error::invalid("training data must contain both real and synthetic rows"));
    }

    // early-stopping slice: 10% of each class
    let (fit_rows, valid_rows) = if config.early_stopping_rounds > 0 && rows.len() >= 20 {
        let mut fit = Vec::new();
        let mut valid = Vec::new();
        for label in [0u8, 1u8] {
            let mut idx: Vec<usize> = rows.iter().copied().filter(|&r| labels[r] == label).collect();
            idx.shuffle(&mut rng_for(config.seed, &[0xE5, label as u64]));
            let n_valid = ((idx.len() as f64) * 0.1).round().max(1.0) as usize;
            valid.extend_from_slice(&idx[..n_valid]);
            fit.extend_from_slice(&idx[n_valid..]);
        }
        fit.sort_unstable();
        valid.sort_unstable();
        (fit, valid)
    } else {
        (rows.clone(), Vec::new())
    };

    let data = &train.data;
    let prior = fit_rows.iter().filter(|&&r| labels[r] == 1).count() as f64 / fit_rows.len() as f64;
    let base_score = logit(prior);

    // local indexing: binned arrays follow `fit_rows` order
    let features = bin_features(data, &fit_rows, config.max_bins);
    let fit_labels: Vec<u8> = fit_rows.iter().map(|&r| labels[r]).collect();
    let mut margins = vec![base_score; data.n_rows()];
    let local: Vec<usize> = (0..fit_rows.len()).collect();
    let mut local_margins = vec![base_score; fit_rows.len()];

    let mut trace = FitTrace {
        train_loss: vec![mean_loss(&local_margins, &fit_labels, &local)],
        valid_loss: Vec::new(),
        n_trees: 0,
    };
    if !valid_rows.is_empty() {
        trace.valid_loss.push(mean_loss(&margins, labels, &valid_rows));
    }

    let p = data.n_cols();
    let n_cols_used = ((config.colsample * p as f64).round() as usize).clamp(1, p);
    let n_rows_used = ((config.subsample * fit_rows.len() as f64).round() as usize).clamp(1, fit_rows.len());
    let mut trees: Vec<Tree> = Vec::new();
    let mut best = (trace.valid_loss.first().copied().unwrap_or(f64::INFINITY), 0usize);

    for t in 0..config.n_trees {
        let (grad, hess): (Vec<f64>, Vec<f64>) = local_margins
            .par_iter()
            .zip(&fit_labels)
            .map(|(&m, &y)| {
                let p = sigmoid(m);
                (p - y as f64, (p * (1.0 - p)).max(1e-16))
            })
            .unzip();
        let mut allowed: Vec<usize> = (0..p).collect();
        if n_cols_used < p {
            allowed.shuffle(&mut rng_for(config.seed, &[0xC0, t as u64]));
            allowed.truncate(n_cols_used);
            allowed.sort_unstable();
        }
        let sample: Vec<usize> = if n_rows_used < fit_rows.len() {
            let mut s = local.clone();
            s.shuffle(&mut rng_for(config.seed, &[0x50, t as u64]));
            s.truncate(n_rows_used);
            s.sort_unstable();
            s
        } else {
            local.clone()
        };
        let mut grower = Grower {
            features: &features,
            grad: &grad,
            hess: &hess,
            cfg: config,
            allowed,
            nodes: Vec::new(),
        };
        grower.grow(sample, 0);
        let tree = Tree { nodes: grower.nodes };

        local_margins
            .par_iter_mut()
            .zip(&fit_rows)
            .for_each(|(m, &r)| *m += tree.predict(data.row(r)));
        for &r in &valid_rows {
            margins[r] += tree.predict(data.row(r));
        }
        trees.push(tree);
        trace.train_loss.push(mean_loss(&local_margins, &fit_labels, &local));

        if !valid_rows.is_empty() {
            let v = mean_loss(&margins, labels, &valid_rows);
            trace.valid_loss.push(v);
            if v < best.0 {
                best = (v, trees.len());
            } else if trees.len() - best.1 >= config.early_stopping_rounds {
                break;
            }
        }
    }
    if !valid_rows.is_empty() {
        trees.truncate(best.1);
    }
    trace.n_trees = trees.len();

    let schema = data.schema().clone();
    Ok((
        TreeEnsembleModel {
            trees,
            base_score,
            schema_fingerprint: schema.fingerprint(),
            schema,
            config: config.clone(),
            seed: config.seed,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnSchema, Provenance, Schema};
    use crate::detector::Classifier;

    fn dataset(rows: &[(f64, f64, u8)]) -> DetectionDataset {
        let schema = Schema::new(vec![
            ColumnSchema::numeric("x"),
            ColumnSchema::categorical("c", ["a", "b", "c"]),
        ])
        .unwrap();
        let values: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1]).collect();
        let data = TabularDataset::new(schema, values, Provenance::Unlabeled).unwrap();
        DetectionDataset::new(data, rows.iter().map(|r| r.2).collect(), 0).unwrap()
    }

    #[test]
    fn zero_trees_is_the_class_prior() {
        let d = dataset(&[(0.0, 0.0, 1), (1.0, 1.0, 0), (2.0, 2.0, 0), (3.0, 0.0, 0)]);
        let cfg = TrainConfig {
            n_trees: 0,
            early_stopping_rounds: 0,
            ..TrainConfig::default()
        };
        let m = fit_gbdt(&d, &cfg).unwrap();
        assert!(m.trees.is_empty());
        assert!((m.proba_row(&[0.0, 0.0]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_rejected() {
        let d = dataset(&[(0.0, 0.0, 1), (1.0, 1.0, 1)]);
        assert!(fit_gbdt(&d, &TrainConfig::default()).is_err());
    }

    #[test]
    fn constant_features_give_single_leaf_trees() {
        let d = dataset(&[(1.0, 0.0, 1), (1.0, 0.0, 0), (1.0, 0.0, 1), (1.0, 0.0, 0)]);
        let cfg = TrainConfig {
            n_trees: 3,
            early_stopping_rounds: 0,
            ..TrainConfig::default()
        };
        let m = fit_gbdt(&d, &cfg).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn categorical_subset_split_separates_classes() {
        let mut rows = Vec::new();
        for i in 0..60 {
            let c = (i % 3) as f64;
            rows.push((i as f64 * 0.0, c, u8::from(c == 1.0)));
        }
        let d = dataset(&rows);
        let cfg = TrainConfig {
            n_trees: 20,
            max_depth: 1,
            learning_rate: 0.5,
            min_child_weight: 0.0,
            early_stopping_rounds: 0,
            ..TrainConfig::default()
        };
        let m = fit_gbdt(&d, &cfg).unwrap();
        match &m.trees[0].nodes[0] {
            Node::Internal { rule: SplitRule::Categorical { left }, .. } => {
                assert!(left == &vec![1] || left == &vec![0, 2]);
            }
            other => panic!("expected categorical root split, got {other:?}"),
        }
        assert!(m.proba_row(&[0.0, 1.0]) > 0.9);
        assert!(m.proba_row(&[0.0, 2.0]) < 0.1);
        // unknown category follows the default branch to a finite probability
        let p = m.proba_row(&[0.0, UNKNOWN_CODE]);
        assert!(p.is_finite() && (0.0..=1.0).contains(&p));
    }

    #[test]
    fn numeric_thresholds_match_binned_routing() {
        let rows: Vec<(f64, f64, u8)> = (0..40).map(|i| (i as f64, 0.0, u8::from(i >= 17))).collect();
        let d = dataset(&rows);
        let cfg = TrainConfig {
            n_trees: 1,
            max_depth: 1,
            min_child_weight: 0.0,
            early_stopping_rounds: 0,
            ..TrainConfig::default()
        };
        let m = fit_gbdt(&d, &cfg).unwrap();
        match &m.trees[0].nodes[0] {
            Node::Internal { rule: SplitRule::Numeric { threshold }, .. } => assert_eq!(*threshold, 16.5),
            other => panic!("unexpected root {other:?}"),
        }
    }
}

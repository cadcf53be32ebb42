//! Single CART trees with variance-reduction (numeric target) or Gini
//! (categorical target) splits. Used by the random-forest baseline and by
//! the autoregressive chain synthesizer.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, TabularDataset, UNKNOWN_CODE};
use crate::rng::Rng;
use crate::tree::{Node, SplitRule, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum CartTask {
    Regression,
    Classification { n_classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` tries all of them.
    pub max_features: Option<usize>,
}

impl Default for CartConfig {
    fn default() -> Self {
        CartConfig {
            max_depth: 8,
            min_leaf: 10,
            max_features: None,
        }
    }
}

/// A fitted tree plus, for each leaf node id, the training rows that reached it.
#[derive(Debug, Clone)]
pub struct CartFit {
    pub tree: Tree,
    pub leaf_rows: Vec<Vec<usize>>,
}

#[derive(Clone)]
enum Acc {
    Reg { n: f64, sum: f64, sumsq: f64 },
    Cls { n: f64, counts: Vec<f64> },
}

impl Acc {
    fn new(task: CartTask) -> Acc {
        match task {
            CartTask::Regression => Acc::Reg {
                n: 0.0,
                sum: 0.0,
                sumsq: 0.0,
            },
            CartTask::Classification { n_classes } => Acc::Cls {
                n: 0.0,
                counts: vec![0.0; n_classes],
            },
        }
    }

    fn n(&self) -> f64 {
        match self {
            Acc::Reg { n, .. } | Acc::Cls { n, .. } => *n,
        }
    }

    fn add(&mut self, y: f64, sign: f64) {
        match self {
            Acc::Reg { n, sum, sumsq } => {
                *n += sign;
                *sum += sign * y;
                *sumsq += sign * y * y;
            }
            Acc::Cls { n, counts } => {
                *n += sign;
                counts[y as usize] += sign;
            }
        }
    }

    fn merge(&mut self, other: &Acc, sign: f64) {
        match (self, other) {
            (Acc::Reg { n, sum, sumsq }, Acc::Reg { n: n2, sum: s2, sumsq: q2 }) => {
                *n += sign * n2;
                *sum += sign * s2;
                *sumsq += sign * q2;
            }
            (Acc::Cls { n, counts }, Acc::Cls { n: n2, counts: c2 }) => {
                *n += sign * n2;
                for (a, b) in counts.iter_mut().zip(c2) {
                    *a += sign * b;
                }
            }
            _ => unreachable!("accumulators of one tree share a task"),
        }
    }

    /// Node impurity scaled by row count (SSE or n * Gini).
    fn impurity(&self) -> f64 {
        match self {
            Acc::Reg { n, sum, sumsq } => {
                if *n <= 0.0 {
                    0.0
                } else {
                    (sumsq - sum * sum / n).max(0.0)
                }
            }
            Acc::Cls { n, counts } => {
                if *n <= 0.0 {
                    0.0
                } else {
                    n - counts.iter().map(|c| c * c).sum::<f64>() / n
                }
            }
        }
    }
}

struct Builder<'a> {
    x: &'a TabularDataset,
    features: &'a [usize],
    target: &'a [f64],
    task: CartTask,
    cfg: &'a CartConfig,
    rng: &'a mut Rng,
    nodes: Vec<Node>,
    leaf_rows: Vec<Vec<usize>>,
}

struct Best {
    feature: usize,
    gain: f64,
    rule: SplitRule,
    default_left: bool,
}

impl Builder<'_> {
    fn acc(&self, rows: &[usize]) -> Acc {
        let mut a = Acc::new(self.task);
        for &r in rows {
            a.add(self.target[r], 1.0);
        }
        a
    }

    fn numeric_split(&self, f: usize, rows: &[usize], parent: &Acc) -> Option<Best> {
        let mut order: Vec<usize> = rows.to_vec();
        order.sort_by(|&a, &b| self.x.get(a, f).total_cmp(&self.x.get(b, f)));
        let min_leaf = self.cfg.min_leaf as f64;
        let base = parent.impurity();
        let mut left = Acc::new(self.task);
        let mut right = parent.clone();
        let mut best: Option<(f64, f64)> = None;
        for w in 0..order.len().saturating_sub(1) {
            let y = self.target[order[w]];
            left.add(y, 1.0);
            right.add(y, -1.0);
            let (a, b) = (self.x.get(order[w], f), self.x.get(order[w + 1], f));
            if a == b || left.n() < min_leaf || right.n() < min_leaf {
                continue;
            }
            let gain = base - left.impurity() - right.impurity();
            if gain > 1e-12 && best.is_none_or(|(g, _)| gain > g) {
                let mid = 0.5 * (a + b);
                best = Some((gain, if mid > a { mid } else { b }));
            }
        }
        best.map(|(gain, threshold)| Best {
            feature: f,
            gain,
            rule: SplitRule::Numeric { threshold },
            default_left: false,
        })
    }

    fn categorical_split(&self, f: usize, rows: &[usize], parent: &Acc) -> Option<Best> {
        let k = self.x.schema().column(f).n_categories();
        // slot k holds unknown codes
        let mut per_cat: Vec<Acc> = vec![Acc::new(self.task); k + 1];
        for &r in rows {
            let v = self.x.get(r, f);
            let slot = if v == UNKNOWN_CODE { k } else { v as usize };
            per_cat[slot].add(self.target[r], 1.0);
        }
        let present: Vec<usize> = (0..=k).filter(|&c| per_cat[c].n() > 0.0).collect();
        if present.len() < 2 {
            return None;
        }
        let key = |a: &Acc| -> f64 {
            match a {
                Acc::Reg { n, sum, .. } => sum / n,
                Acc::Cls { n, counts } => {
                    let major = parent_major(parent);
                    counts[major] / n
                }
            }
        };
        let mut order = present.clone();
        order.sort_by(|&a, &b| key(&per_cat[a]).total_cmp(&key(&per_cat[b])).then(a.cmp(&b)));
        let min_leaf = self.cfg.min_leaf as f64;
        let base = parent.impurity();
        let mut left = Acc::new(self.task);
        let mut best: Option<(f64, usize)> = None;
        for m in 0..order.len() - 1 {
            left.merge(&per_cat[order[m]], 1.0);
            let mut right = parent.clone();
            right.merge(&left, -1.0);
            if left.n() < min_leaf || right.n() < min_leaf {
                continue;
            }
            // a subset made of the unknown slot alone cannot be expressed as a rule
            if m == 0 && order[0] == k {
                continue;
            }
            let gain = base - left.impurity() - right.impurity();
            if gain > 1e-12 && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, m));
            }
        }
        let (gain, m) = best?;
        let mut left_codes: Vec<u32> = order[..=m].iter().filter(|&&c| c < k).map(|&c| c as u32).collect();
        left_codes.sort_unstable();
        let unknown_left = order[..=m].contains(&k);
        let default_left = if per_cat[k].n() > 0.0 {
            unknown_left
        } else {
            left.n() >= parent.n() - left.n()
        };
        Some(Best {
            feature: f,
            gain,
            rule: SplitRule::Categorical { left: left_codes },
            default_left,
        })
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let acc = self.acc(&rows);
        let id = self.nodes.len();
        let value = match &acc {
            Acc::Reg { n, sum, .. } => sum / n,
            Acc::Cls { n, counts } => counts.get(1).copied().unwrap_or(0.0) / n,
        };
        self.nodes.push(Node::Leaf {
            value,
            cover: acc.n(),
        });
        self.leaf_rows.push(Vec::new());
        let can_split = depth < self.cfg.max_depth
            && rows.len() >= 2 * self.cfg.min_leaf.max(1)
            && acc.impurity() > 1e-12;
        if !can_split {
            self.leaf_rows[id] = rows;
            return id;
        }
        let mut candidates: Vec<usize> = self.features.to_vec();
        if let Some(m) = self.cfg.max_features {
            if m < candidates.len() {
                candidates.shuffle(self.rng);
                candidates.truncate(m.max(1));
                candidates.sort_unstable();
            }
        }
        let mut best: Option<Best> = None;
        for &f in &candidates {
            let cand = match self.x.schema().column(f).kind {
                ColumnKind::Numeric => self.numeric_split(f, &rows, &acc),
                ColumnKind::Categorical => self.categorical_split(f, &rows, &acc),
            };
            if let Some(c) = cand {
                if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        let Some(best) = best else {
            self.leaf_rows[id] = rows;
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| {
            best.rule
                .route(self.x.get(i, best.feature))
                .unwrap_or(best.default_left)
        });
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Internal {
            feature: best.feature,
            rule: best.rule,
            left,
            right,
            default_left: best.default_left,
            cover: acc.n(),
        };
        id
    }
}

fn parent_major(parent: &Acc) -> usize {
    match parent {
        Acc::Cls { counts, .. } => counts
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
            .0,
        Acc::Reg { .. } => 0,
    }
}

/// Fits one tree predicting `target[row]` from the listed feature columns of
/// `x`, using the given (possibly repeated) training rows.
pub fn fit_cart(
    x: &TabularDataset,
    features: &[usize],
    target: &[f64],
    task: CartTask,
    rows: &[usize],
    cfg: &CartConfig,
    rng: &mut Rng,
) -> CartFit {
    assert!(!rows.is_empty(), "CART needs at least one row");
    let mut b = Builder {
        x,
        features,
        target,
        task,
        cfg,
        rng,
        nodes: Vec::new(),
        leaf_rows: Vec::new(),
    };
    b.grow(rows.to_vec(), 0);
    CartFit {
        tree: Tree { nodes: b.nodes },
        leaf_rows: b.leaf_rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnSchema, Provenance, Schema};
    use crate::rng::rng_for;

    #[test]
    fn regression_tree_finds_step() {
        let schema = Schema::new(vec![ColumnSchema::numeric("x")]).unwrap();
        let xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v < 20.0 { 1.0 } else { 5.0 }).collect();
        let d = TabularDataset::new(schema, xs, Provenance::Real).unwrap();
        let rows: Vec<usize> = (0..40).collect();
        let cfg = CartConfig {
            max_depth: 3,
            min_leaf: 2,
            max_features: None,
        };
        let fit = fit_cart(&d, &[0], &y, CartTask::Regression, &rows, &cfg, &mut rng_for(0, &[]));
        assert_eq!(fit.tree.nodes.len(), 3);
        assert_eq!(fit.tree.predict(&[3.0]), 1.0);
        assert_eq!(fit.tree.predict(&[30.0]), 5.0);
        let pooled: usize = fit.leaf_rows.iter().map(Vec::len).sum();
        assert_eq!(pooled, 40);
    }

    #[test]
    fn gini_tree_on_categorical_predictor() {
        let schema = Schema::new(vec![ColumnSchema::categorical("c", ["a", "b", "c"])]).unwrap();
        let xs: Vec<f64> = (0..30).map(|i| (i % 3) as f64).collect();
        let y: Vec<f64> = xs.iter().map(|&c| f64::from(c == 1.0)).collect();
        let d = TabularDataset::new(schema, xs, Provenance::Real).unwrap();
        let rows: Vec<usize> = (0..30).collect();
        let cfg = CartConfig {
            max_depth: 2,
            min_leaf: 1,
            max_features: None,
        };
        let fit = fit_cart(
            &d,
            &[0],
            &y,
            CartTask::Classification { n_classes: 2 },
            &rows,
            &cfg,
            &mut rng_for(0, &[]),
        );
        assert_eq!(fit.tree.predict(&[1.0]), 1.0);
        assert_eq!(fit.tree.predict(&[0.0]), 0.0);
        assert_eq!(fit.tree.predict(&[2.0]), 0.0);
    }
}

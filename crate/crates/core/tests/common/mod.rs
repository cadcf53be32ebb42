#![allow(dead_code)]

use rand::Rng as _;
use synaudit::dataset::{ColumnSchema, Provenance, Schema, TabularDataset};
use synaudit::detector::{Classifier, TreeEnsembleModel};
use synaudit::math::sigmoid;
use synaudit::rng::{rng_for, Rng};
use synaudit::tree::{Node, SplitRule, Tree};

pub fn binary_schema(p: usize) -> Schema {
    Schema::new((0..p).map(|j| ColumnSchema::numeric(format!("f{j}"))).collect()).unwrap()
}

/// Every row of {0, 1}^p.
pub fn exhaustive_table(p: usize) -> TabularDataset {
    let rows: Vec<Vec<f64>> = (0..1u64 << p)
        .map(|m| (0..p).map(|j| (m >> j & 1) as f64).collect())
        .collect();
    TabularDataset::from_rows(binary_schema(p), &rows, Provenance::Unlabeled).unwrap()
}

fn grow(nodes: &mut Vec<Node>, rng: &mut Rng, p: usize, depth: usize, max_depth: usize) -> usize {
    let id = nodes.len();
    nodes.push(Node::Leaf { value: 0.0, cover: 0.0 });
    if depth < max_depth && (depth == 0 || rng.gen_bool(0.7)) {
        let feature = rng.gen_range(0..p);
        let left = grow(nodes, rng, p, depth + 1, max_depth);
        let right = grow(nodes, rng, p, depth + 1, max_depth);
        let cover = nodes[left].cover() + nodes[right].cover();
        nodes[id] = Node::Internal {
            feature,
            rule: SplitRule::Numeric { threshold: 0.5 },
            left,
            right,
            default_left: rng.gen_bool(0.5),
            cover,
        };
    } else {
        nodes[id] = Node::Leaf {
            value: rng.gen_range(-1.5..1.5),
            cover: rng.gen_range(1..20) as f64,
        };
    }
    id
}

pub fn random_tree(rng: &mut Rng, p: usize, max_depth: usize) -> Tree {
    let mut nodes = Vec::new();
    grow(&mut nodes, rng, p, 0, max_depth);
    Tree { nodes }
}

/// Random ensemble over binary features with consistent covers.
pub fn random_ensemble(p: usize, n_trees: usize, max_depth: usize, seed: u64) -> TreeEnsembleModel {
    let mut rng = rng_for(seed, &[0xABC]);
    let trees = (0..n_trees).map(|_| random_tree(&mut rng, p, max_depth)).collect();
    let base = rng.gen_range(-0.5..0.5);
    TreeEnsembleModel::from_trees(binary_schema(p), trees, base)
}

/// Path-dependent expectation of one tree given that the features in `mask`
/// are known: follow the row on known features, average children by cover otherwise.
pub fn cover_expectation(tree: &Tree, node: usize, row: &[f64], mask: u64) -> f64 {
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => *value,
        Node::Internal {
            feature, left, right, ..
        } => {
            if mask >> feature & 1 == 1 {
                cover_expectation(tree, tree.next(node, row).unwrap(), row, mask)
            } else {
                let (cl, cr) = (tree.nodes[*left].cover(), tree.nodes[*right].cover());
                (cl * cover_expectation(tree, *left, row, mask) + cr * cover_expectation(tree, *right, row, mask))
                    / (cl + cr)
            }
        }
    }
}

pub fn ensemble_cover_value(model: &TreeEnsembleModel, row: &[f64], mask: u64) -> f64 {
    model.base_score + model.trees.iter().map(|t| cover_expectation(t, 0, row, mask)).sum::<f64>()
}

/// A classifier whose log-odds are a fixed function of the row.
pub struct FnModel<F> {
    pub schema: Schema,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Classifier for FnModel<F> {
    fn schema(&self) -> &Schema {
        &self.schema
    }
    fn proba_row(&self, row: &[f64]) -> f64 {
        sigmoid((self.f)(row))
    }
    fn log_odds_row(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

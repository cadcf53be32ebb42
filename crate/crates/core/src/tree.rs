//! Binary decision trees stored as node arenas, shared by the boosted
//! detector, the random-forest baseline and the CART chain synthesizer.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SplitRule {
    /// Left when `value < threshold`.
    Numeric { threshold: f64 },
    /// Left when the category code is listed. Codes are sorted.
    Categorical { left: Vec<u32> },
}

impl SplitRule {
    /// Routing decision; `None` when the value cannot be routed (unknown category
    /// or non-finite number) and the default branch applies.
    pub fn route(&self, value: f64) -> Option<bool> {
        match self {
            SplitRule::Numeric { threshold } => value.is_finite().then_some(value < *threshold),
            SplitRule::Categorical { left } => {
                if value < 0.0 || value.fract() != 0.0 || !value.is_finite() {
                    None
                } else {
                    Some(left.binary_search(&(value as u32)).is_ok())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Internal {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
        default_left: bool,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Internal { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// Node arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    /// Child index the row follows at an internal node.
    #[inline]
    pub fn next(&self, node: usize, row: &[f64]) -> Option<usize> {
        match &self.nodes[node] {
            Node::Leaf { .. } => None,
            Node::Internal {
                feature,
                rule,
                left,
                right,
                default_left,
                ..
            } => {
                let go_left = rule.route(row[*feature]).unwrap_or(*default_left);
                Some(if go_left { *left } else { *right })
            }
        }
    }

    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut node = 0;
        while let Some(child) = self.next(node, row) {
            node = child;
        }
        node
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, .. } => *value,
            Node::Internal { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &Tree, n: usize) -> usize {
            match &t.nodes[n] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + rec(t, *left).max(rec(t, *right)),
            }
        }
        rec(self, 0)
    }

    /// Sorted, deduplicated indices of features used by any split.
    pub fn features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Internal { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Cover-weighted mean leaf value.
    pub fn expected_value(&self) -> f64 {
        fn rec(t: &Tree, n: usize) -> f64 {
            match &t.nodes[n] {
                Node::Leaf { value, .. } => *value,
                Node::Internal { left, right, .. } => {
                    let (cl, cr) = (t.nodes[*left].cover(), t.nodes[*right].cover());
                    (cl * rec(t, *left) + cr * rec(t, *right)) / (cl + cr)
                }
            }
        }
        rec(self, 0)
    }
}

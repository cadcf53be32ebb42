//! Path-dependent tree Shapley values and interaction values for additive
//! tree ensembles, computed per tree in polynomial time.

use crate::error::{Error, Result};
use crate::tree::{Node, Tree};

#[derive(Clone, Copy, Default, Debug)]
struct PathElement {
    feature: isize,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(path: &mut [PathElement], depth: usize, zero_fraction: f64, one_fraction: f64, feature: isize) {
    path[depth] = PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / d1;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / d1;
    }
}

fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * d1 / ((i + 1) as f64 * one);
            next_one_portion = tmp - path[i].pweight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].pweight = path[i].pweight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    let d1 = (depth + 1) as f64;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one_portion * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero * (depth - i) as f64 / d1;
        } else if zero != 0.0 {
            total += path[i].pweight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

/// Conditioning of one feature while attributing: none, forced present, or forced absent.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Condition {
    None,
    On(usize),
    Off(usize),
}

struct Walker<'a> {
    tree: &'a Tree,
    row: &'a [f64],
    phi: &'a mut [f64],
    condition: Condition,
}

impl Walker<'_> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        node: usize,
        depth: isize,
        parent_path: &[PathElement],
        parent_zero: f64,
        parent_one: f64,
        parent_feature: isize,
        condition_fraction: f64,
    ) {
        if condition_fraction == 0.0 {
            return;
        }
        let mut depth = depth;
        let du = depth as usize;
        let mut path: Vec<PathElement> = parent_path[..parent_path.len().min(du + 1)].to_vec();
        path.resize(du + 1, PathElement::default());
        let cond_feature = match self.condition {
            Condition::None => None,
            Condition::On(f) | Condition::Off(f) => Some(f as isize),
        };
        if cond_feature != Some(parent_feature) || self.condition == Condition::None {
            extend_path(&mut path, du, parent_zero, parent_one, parent_feature);
        }

        match &self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                for i in 1..=du {
                    let w = unwound_path_sum(&path, du, i);
                    let el = path[i];
                    self.phi[el.feature as usize] += w * (el.one_fraction - el.zero_fraction) * value * condition_fraction;
                }
            }
            Node::Internal {
                feature, left, right, ..
            } => {
                let hot = self.tree.next(node, self.row).expect("internal node");
                let cold = if hot == *left { *right } else { *left };
                let (ch, cc) = (self.tree.nodes[hot].cover(), self.tree.nodes[cold].cover());
                let hot_zero = ch / (ch + cc);
                let cold_zero = cc / (ch + cc);
                let mut incoming_zero = 1.0;
                let mut incoming_one = 1.0;

                let split = *feature as isize;
                if let Some(k) = (0..=du).find(|&k| path[k].feature == split) {
                    incoming_zero = path[k].zero_fraction;
                    incoming_one = path[k].one_fraction;
                    unwind_path(&mut path, du, k);
                    depth -= 1;
                }

                let mut hot_fraction = condition_fraction;
                let mut cold_fraction = condition_fraction;
                match self.condition {
                    Condition::On(f) if f == *feature => {
                        cold_fraction = 0.0;
                        depth -= 1;
                    }
                    Condition::Off(f) if f == *feature => {
                        hot_fraction *= hot_zero;
                        cold_fraction *= cold_zero;
                        depth -= 1;
                    }
                    _ => {}
                }
                self.recurse(hot, depth + 1, &path, hot_zero * incoming_zero, incoming_one, split, hot_fraction);
                self.recurse(cold, depth + 1, &path, cold_zero * incoming_zero, 0.0, split, cold_fraction);
            }
        }
    }
}

pub(crate) fn check_covers(trees: &[Tree]) -> Result<()> {
    for (t, tree) in trees.iter().enumerate() {
        for node in &tree.nodes {
            let c = node.cover();
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!(
                    "tree {t} has a node without a positive cover; path-dependent attribution needs covers"
                )));
            }
        }
    }
    Ok(())
}

fn tree_phi(tree: &Tree, row: &[f64], p: usize, condition: Condition) -> Vec<f64> {
    let mut phi = vec![0.0; p];
    let mut w = Walker {
        tree,
        row,
        phi: &mut phi,
        condition,
    };
    w.recurse(0, 0, &[], 1.0, 1.0, -1, 1.0);
    phi
}

/// Per-feature attributions of the summed tree outputs (without intercept).
pub fn tree_shap_values(trees: &[Tree], row: &[f64], p: usize) -> Result<Vec<f64>> {
    check_covers(trees)?;
    let mut phi = vec![0.0; p];
    for tree in trees {
        for (a, b) in phi.iter_mut().zip(tree_phi(tree, row, p, Condition::None)) {
            *a += b;
        }
    }
    Ok(phi)
}

/// Symmetric interaction matrix; off-diagonals split each pair evenly and the
/// diagonal holds what remains of each feature's attribution.
pub fn tree_shap_interaction_values(trees: &[Tree], row: &[f64], p: usize) -> Result<Vec<Vec<f64>>> {
    check_covers(trees)?;
    let mut out = vec![vec![0.0; p]; p];
    let mut phi = vec![0.0; p];
    for tree in trees {
        let base = tree_phi(tree, row, p, Condition::None);
        for (a, b) in phi.iter_mut().zip(&base) {
            *a += b;
        }
        for j in tree.features() {
            let on = tree_phi(tree, row, p, Condition::On(j));
            let off = tree_phi(tree, row, p, Condition::Off(j));
            for i in 0..p {
                if i != j {
                    out[i][j] += (on[i] - off[i]) / 2.0;
                }
            }
        }
    }
    for i in 0..p {
        let off_diag: f64 = (0..p).filter(|&j| j != i).map(|j| out[i][j]).sum();
        out[i][i] = phi[i] - off_diag;
    }
    Ok(out)
}

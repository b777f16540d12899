use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::GradientPair;
use super::split::{best_over_features, find_best_split, SplitParams};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
}

/// One node of a flat tree; children are indices into the node array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Where a missing value goes. Training rejects missing values, so this is always `Left`.
        default_direction: Direction,
    },
    Leaf {
        weight: f64,
    },
}

/// A regression tree stored as a flat node array, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Tree { nodes: vec![TreeNode::Leaf { weight }] }
    }

    /// Raw leaf value for `row`, before learning-rate scaling.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { weight } => weight,
            TreeNode::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    /// Index of the leaf node that `row` falls into.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { .. } => return idx,
                TreeNode::Split { feature, threshold, left, right, default_direction } => {
                    let x = row[*feature];
                    let go_left = if x.is_nan() { *default_direction == Direction::Left } else { x < *threshold };
                    idx = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// The same tree with every leaf weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Tree {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match n {
                TreeNode::Leaf { weight } => TreeNode::Leaf { weight: weight * factor },
                split => split.clone(),
            })
            .collect();
        Tree { nodes }
    }

    pub fn leaf_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { weight } => Some(*weight),
            TreeNode::Split { .. } => None,
        })
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_weights().count()
    }

    /// Depth of the deepest node, the root being at depth 0.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], idx: usize) -> usize {
            match &nodes[idx] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Feature columns plus, per feature, every training row id in ascending value order.
pub(crate) struct SortedColumns {
    pub columns: Vec<Vec<f64>>,
    pub order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(features: &FeatureMatrix) -> Self {
        let columns: Vec<Vec<f64>> = (0..features.n_cols()).map(|c| features.column(c)).collect();
        let order = columns
            .par_iter()
            .map(|col| {
                let mut rows: Vec<u32> = (0..col.len() as u32).collect();
                super::split::sort_rows_by(&mut rows, col);
                rows
            })
            .collect();
        SortedColumns { columns, order }
    }
}

struct Grower<'a> {
    columns: &'a [Vec<f64>],
    /// Per feature; a node owns the same `[start, end)` range in every feature.
    order: Vec<Vec<u32>>,
    grads: &'a [GradientPair],
    params: SplitParams,
    max_depth: usize,
    goes_left: Vec<bool>,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn grow(&mut self, start: usize, end: usize, depth: usize, total: (f64, f64)) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { weight: self.params.leaf_weight(total.0, total.1) });
        if depth >= self.max_depth || end - start < 2 {
            return idx;
        }
        let views: Vec<&[u32]> = self.order.iter().map(|o| &o[start..end]).collect();
        let Some(split) = best_over_features(&views, self.columns, self.grads, total, &self.params) else {
            return idx;
        };

        let mid = start + split.left_count;
        for &row in &self.order[split.feature][start..mid] {
            self.goes_left[row as usize] = true;
        }
        let goes_left = &self.goes_left;
        let partition = |o: &mut Vec<u32>| stable_partition(&mut o[start..end], goes_left);
        if end - start >= 2048 {
            self.order.par_iter_mut().for_each(partition);
        } else {
            self.order.iter_mut().for_each(partition);
        }
        for &row in &self.order[split.feature][start..mid] {
            self.goes_left[row as usize] = false;
        }

        let left = self.grow(start, mid, depth + 1, (split.left_grad, split.left_hess));
        let right = self.grow(mid, end, depth + 1, (split.right_grad, split.right_hess));
        self.nodes[idx] =
            TreeNode::Split { feature: split.feature, threshold: split.threshold, left, right, default_direction: Direction::Left };
        idx
    }
}

/// Moves rows flagged in `goes_left` to the front, preserving relative order on both sides.
fn stable_partition(rows: &mut [u32], goes_left: &[bool]) {
    let mut right = Vec::with_capacity(rows.len());
    let mut write = 0;
    for i in 0..rows.len() {
        let r = rows[i];
        if goes_left[r as usize] {
            rows[write] = r;
            write += 1;
        } else {
            right.push(r);
        }
    }
    rows[write..].copy_from_slice(&right);
}

pub(crate) fn grow_tree_sorted(sorted: &SortedColumns, grads: &[GradientPair], params: SplitParams, max_depth: usize) -> Tree {
    let n = grads.len();
    let total = grads.iter().fold((0.0, 0.0), |(g, h), p| (g + p.g, h + p.h));
    let mut grower = Grower {
        columns: &sorted.columns,
        order: sorted.order.clone(),
        grads,
        params,
        max_depth,
        goes_left: vec![false; n],
        nodes: Vec::new(),
    };
    if n > 0 {
        grower.grow(0, n, 0, total);
    } else {
        grower.nodes.push(TreeNode::Leaf { weight: 0.0 });
    }
    Tree { nodes: grower.nodes }
}

/// Greedy depth-first growth on all rows of `features`, one gradient pair per row.
///
/// Leaves hold `-G / (H + lambda)` unscaled by the learning rate.
pub fn grow_tree(features: &FeatureMatrix, grads: &[GradientPair], params: SplitParams, max_depth: usize) -> Tree {
    assert_eq!(features.n_rows(), grads.len(), "one gradient pair per row");
    grow_tree_sorted(&SortedColumns::new(features), grads, params, max_depth)
}

/// Reference grower that re-sorts every node from scratch; used to cross-check
/// the partitioned layout.
#[doc(hidden)]
pub fn grow_tree_naive(features: &FeatureMatrix, grads: &[GradientPair], params: SplitParams, max_depth: usize) -> Tree {
    fn grow(
        x: &FeatureMatrix,
        rows: Vec<usize>,
        grads: &[GradientPair],
        params: &SplitParams,
        depth: usize,
        max_depth: usize,
        nodes: &mut Vec<TreeNode>,
    ) -> usize {
        let idx = nodes.len();
        let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + grads[r].g, h + grads[r].h));
        nodes.push(TreeNode::Leaf { weight: params.leaf_weight(g, h) });
        if depth >= max_depth || rows.len() < 2 {
            return idx;
        }
        let Some(s) = find_best_split(x, &rows, grads, params) else {
            return idx;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, s.feature) < s.threshold);
        let left = grow(x, l, grads, params, depth + 1, max_depth, nodes);
        let right = grow(x, r, grads, params, depth + 1, max_depth, nodes);
        nodes[idx] = TreeNode::Split { feature: s.feature, threshold: s.threshold, left, right, default_direction: Direction::Left };
        idx
    }
    let mut nodes = Vec::new();
    grow(features, (0..features.n_rows()).collect(), grads, &params, 0, max_depth, &mut nodes);
    Tree { nodes }
}

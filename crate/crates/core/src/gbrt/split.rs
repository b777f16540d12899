//! Exact greedy split search over pre-sorted feature columns.
//!
//! For a node with gradient sums `(G, H)` and a candidate partition into
//! `(G_L, H_L)` / `(G_R, H_R)` the gain is
//!
//! ```text
//! 1/2 * [G_L^2 / (H_L + lambda) + G_R^2 / (H_R + lambda) - G^2 / (H + lambda)] - gamma
//! ```
//!
//! Candidates are the midpoints between consecutive distinct values; rows with
//! `x < threshold` go left. Only strictly positive gains are returned. Ties go
//! to the lowest feature index, then to the lowest threshold.

use rayon::prelude::*;

use super::loss::GradientPair;
use super::HyperParams;
use crate::matrix::FeatureMatrix;

/// Node sizes below this scan features serially; the result does not depend on it.
const PARALLEL_MIN_ROWS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_hessian: f64,
}

impl From<&HyperParams> for SplitParams {
    fn from(p: &HyperParams) -> Self {
        SplitParams { lambda: p.lambda, gamma: p.gamma, min_child_hessian: p.min_child_hessian }
    }
}

impl SplitParams {
    /// `G^2 / (H + lambda)`, zero when the denominator vanishes.
    pub fn score(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.lambda;
        if denom > 0.0 {
            g * g / denom
        } else {
            0.0
        }
    }

    pub fn gain(&self, left: (f64, f64), right: (f64, f64), total: (f64, f64)) -> f64 {
        0.5 * (self.score(left.0, left.1) + self.score(right.0, right.1) - self.score(total.0, total.1)) - self.gamma
    }

    /// Optimal leaf value `-G / (H + lambda)`.
    pub fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.lambda;
        if denom > 0.0 {
            -g / denom
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    /// Rows with `x < threshold`.
    pub left_count: usize,
    pub left_grad: f64,
    pub left_hess: f64,
    pub right_grad: f64,
    pub right_hess: f64,
}

impl SplitCandidate {
    /// True if `self` wins over `other` under the documented ordering.
    pub fn beats(&self, other: &SplitCandidate) -> bool {
        if self.gain != other.gain {
            return self.gain > other.gain;
        }
        if self.feature != other.feature {
            return self.feature < other.feature;
        }
        self.threshold < other.threshold
    }
}

/// Midpoint of `lo < hi` that still separates them under `x < threshold`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

/// Best split of one feature for a node whose rows are given in ascending
/// value order.
pub(crate) fn scan_feature(
    feature: usize,
    sorted_rows: &[u32],
    values: &[f64],
    grads: &[GradientPair],
    total: (f64, f64),
    params: &SplitParams,
) -> Option<SplitCandidate> {
    let mut best: Option<SplitCandidate> = None;
    let (mut gl, mut hl) = (0.0, 0.0);
    for (pos, pair) in sorted_rows.windows(2).enumerate() {
        let (row, next) = (pair[0] as usize, pair[1] as usize);
        gl += grads[row].g;
        hl += grads[row].h;
        let (lo, hi) = (values[row], values[next]);
        if lo == hi {
            continue;
        }
        let (gr, hr) = (total.0 - gl, total.1 - hl);
        if hl < params.min_child_hessian || hr < params.min_child_hessian {
            continue;
        }
        let gain = params.gain((gl, hl), (gr, hr), total);
        if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
            best = Some(SplitCandidate {
                feature,
                threshold: midpoint(lo, hi),
                gain,
                left_count: pos + 1,
                left_grad: gl,
                left_hess: hl,
                right_grad: gr,
                right_hess: hr,
            });
        }
    }
    best
}

/// Per-feature search followed by an index-ordered reduction, so the result
/// is the same whether features were scanned on one thread or many.
pub(crate) fn best_over_features(
    sorted: &[&[u32]],
    columns: &[Vec<f64>],
    grads: &[GradientPair],
    total: (f64, f64),
    params: &SplitParams,
) -> Option<SplitCandidate> {
    let scan = |f: usize| scan_feature(f, sorted[f], &columns[f], grads, total, params);
    let per_feature: Vec<Option<SplitCandidate>> = if sorted.first().map_or(0, |s| s.len()) >= PARALLEL_MIN_ROWS {
        (0..sorted.len()).into_par_iter().map(scan).collect()
    } else {
        (0..sorted.len()).map(scan).collect()
    };
    reduce(per_feature)
}

fn reduce(per_feature: Vec<Option<SplitCandidate>>) -> Option<SplitCandidate> {
    per_feature.into_iter().flatten().fold(None, |best, cand| match best {
        Some(b) if !cand.beats(&b) => Some(b),
        _ => Some(cand),
    })
}

/// Sorts `rows` by feature value, breaking ties by row index.
pub(crate) fn sort_rows_by(rows: &mut [u32], values: &[f64]) {
    rows.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]).then(a.cmp(&b)));
}

/// Best split over all features for the node holding `rows`.
///
/// `grads` is indexed by row id. Returns `None` when no candidate has
/// positive gain.
pub fn find_best_split(features: &FeatureMatrix, rows: &[usize], grads: &[GradientPair], params: &SplitParams) -> Option<SplitCandidate> {
    let total = rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + grads[r].g, h + grads[r].h));
    let columns: Vec<Vec<f64>> = (0..features.n_cols()).map(|c| features.column(c)).collect();
    let sorted: Vec<Vec<u32>> = columns
        .iter()
        .map(|col| {
            let mut r: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
            sort_rows_by(&mut r, col);
            r
        })
        .collect();
    let views: Vec<&[u32]> = sorted.iter().map(Vec::as_slice).collect();
    best_over_features(&views, &columns, grads, total, params)
}

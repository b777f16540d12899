//! Softmax cross-entropy and its per-class first and second derivatives.

use serde::{Deserialize, Serialize};

use crate::labeling::RampClass;

/// First and second derivative of the loss with respect to one score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GradientPair {
    pub g: f64,
    pub h: f64,
}

impl GradientPair {
    pub fn new(g: f64, h: f64) -> Self {
        GradientPair { g, h }
    }
}

/// Numerically stable softmax of one score row into `out`.
pub fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    softmax_into(scores, &mut out);
    out
}

/// `-log softmax(scores)[target]`, computed as `logsumexp(scores) - scores[target]`.
pub fn cross_entropy(scores: &[f64], target: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    lse - scores[target]
}

/// Writes `g_c = p_c - [c = y]` and `h_c = p_c (1 - p_c)` for one row.
pub fn row_gradients(scores: &[f64], target: usize, probs: &mut [f64], out: &mut [GradientPair]) {
    softmax_into(scores, probs);
    for (c, (o, &p)) in out.iter_mut().zip(probs.iter()).enumerate() {
        let indicator = if c == target { 1.0 } else { 0.0 };
        *o = GradientPair { g: p - indicator, h: p * (1.0 - p) };
    }
}

/// Gradient pairs for a row-major `n x C` score matrix.
///
/// Output is row-major with the same shape as `scores`.
pub fn softmax_gradients(scores: &[f64], num_classes: usize, targets: &[RampClass]) -> Vec<GradientPair> {
    assert_eq!(scores.len(), targets.len() * num_classes, "score matrix shape mismatch");
    let mut out = vec![GradientPair::default(); scores.len()];
    let mut probs = vec![0.0; num_classes];
    for ((row, grads), target) in scores.chunks_exact(num_classes).zip(out.chunks_exact_mut(num_classes)).zip(targets) {
        row_gradients(row, target.index(), &mut probs, grads);
    }
    out
}

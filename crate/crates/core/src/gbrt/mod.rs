//! Multi-class gradient boosted regression trees.
//!
//! Each boosting round computes softmax cross-entropy gradients at the
//! current scores and fits one regression tree per class against them using
//! the second-order objective
//!
//! ```text
//! sum_i [g_i f(x_i) + 1/2 h_i f(x_i)^2] + gamma * T + 1/2 * lambda * sum_j w_j^2
//! ```
//!
//! whose per-leaf minimiser is `w* = -G / (H + lambda)`. Scores are updated
//! additively with the learning rate. Split search is exact over pre-sorted
//! columns and runs one feature per task; results are reduced in feature
//! order, so a model is bit-identical for any worker count.

mod loss;
mod model;
mod split;
pub(crate) mod train;
mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loss::{cross_entropy, row_gradients, softmax, softmax_gradients, softmax_into, GradientPair};
pub use model::{argmax_class, GbrtModel, MODEL_FORMAT_VERSION};
pub use split::{find_best_split, SplitCandidate, SplitParams};
pub use train::{objective, regularization, train, train_dataset, train_with_trace, Training};
pub use tree::{grow_tree, grow_tree_naive, Direction, Tree, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Boosting rounds; each round adds one tree per class.
    pub n_estimators: usize,
    pub max_depth: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Penalty per leaf.
    pub gamma: f64,
    pub learning_rate: f64,
    /// Minimum hessian sum required in each child of a split.
    pub min_child_hessian: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams { n_estimators: 100, max_depth: 4, lambda: 1.0, gamma: 0.0, learning_rate: 0.3, min_child_hessian: 1.0 }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParams(m));
        if self.n_estimators == 0 {
            return fail("n_estimators must be at least 1".into());
        }
        if self.max_depth == 0 {
            return fail("max_depth must be at least 1".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return fail(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return fail(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        if !(self.min_child_hessian.is_finite() && self.min_child_hessian >= 0.0) {
            return fail(format!("min_child_hessian must be finite and >= 0, got {}", self.min_child_hessian));
        }
        Ok(())
    }
}

use rayon::prelude::*;

use super::loss::{cross_entropy, row_gradients, GradientPair};
use super::model::GbrtModel;
use super::split::SplitParams;
use super::tree::{grow_tree_sorted, SortedColumns, Tree, TreeNode};
use super::HyperParams;
use crate::error::{Error, Result};
use crate::labeling::{LabeledDataset, RampClass};
use crate::matrix::FeatureMatrix;

/// A trained model together with the regularized training objective
/// recorded before the first round and after every round.
///
/// Boosting stops before `n_estimators` rounds if no step size lowers the
/// objective, so the model may hold fewer rounds.
#[derive(Debug, Clone)]
pub struct Training {
    pub model: GbrtModel,
    pub objective_trace: Vec<f64>,
    /// Factor applied to each round's Newton leaf weights by the step-halving search.
    pub step_scales: Vec<f64>,
}

/// Trains on a rayon pool with `workers` threads (`0` = one per core).
pub fn train(
    features: &FeatureMatrix,
    targets: &[RampClass],
    num_classes: usize,
    params: &HyperParams,
    workers: usize,
) -> Result<GbrtModel> {
    Ok(train_with_trace(features, targets, num_classes, params, workers)?.model)
}

pub fn train_dataset(dataset: &LabeledDataset, params: &HyperParams, workers: usize) -> Result<GbrtModel> {
    let model = train(&dataset.features, &dataset.targets, dataset.num_classes(), params, workers)?;
    Ok(model.with_horizon(dataset.horizon))
}

pub fn train_with_trace(
    features: &FeatureMatrix,
    targets: &[RampClass],
    num_classes: usize,
    params: &HyperParams,
    workers: usize,
) -> Result<Training> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| train_in_current_pool(features, targets, num_classes, params))
}

fn validate(features: &FeatureMatrix, targets: &[RampClass], num_classes: usize, params: &HyperParams) -> Result<()> {
    params.validate()?;
    if num_classes < 2 {
        return Err(Error::InvalidParams(format!("need at least 2 classes, got {num_classes}")));
    }
    if features.n_rows() != targets.len() {
        return Err(Error::LengthMismatch { left: features.n_rows(), right: targets.len() });
    }
    if targets.is_empty() {
        return Err(Error::EmptyDataset { needed: 1 });
    }
    if let Some(t) = targets.iter().find(|t| t.id() > num_classes) {
        return Err(Error::UnknownClass { id: t.id(), num_classes });
    }
    if targets.iter().all(|t| *t == targets[0]) {
        return Err(Error::SingleClass);
    }
    if let Some(pos) = features.as_slice().iter().position(|v| !v.is_finite()) {
        let cols = features.n_cols();
        return Err(Error::NonFinite(format!("feature value at row {}, column {}", pos / cols, pos % cols)));
    }
    Ok(())
}

/// `ln(count_c / n)`, with empty classes counted as half an observation.
fn prior_log_odds(targets: &[RampClass], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for t in targets {
        counts[t.index()] += 1;
    }
    let n = targets.len() as f64;
    counts.iter().map(|&c| (if c == 0 { 0.5 } else { c as f64 } / n).ln()).collect()
}

/// Per-tree penalty `gamma * leaves + 1/2 * lambda * sum (eta * w)^2`, where
/// `eta * w` is what the tree actually adds to a score.
fn tree_penalty(tree: &Tree, params: &HyperParams) -> f64 {
    let eta = params.learning_rate;
    params.gamma * tree.num_leaves() as f64 + 0.5 * params.lambda * tree.leaf_weights().map(|w| (eta * w) * (eta * w)).sum::<f64>()
}

/// Total penalty of every tree in the model.
pub fn regularization(model: &GbrtModel) -> f64 {
    let params = model.hyperparams();
    model.rounds().iter().map(|round| round.iter().map(|t| tree_penalty(t, params)).sum::<f64>()).sum()
}

/// Summed cross-entropy on `(features, targets)` plus [`regularization`].
pub fn objective(model: &GbrtModel, features: &FeatureMatrix, targets: &[RampClass]) -> Result<f64> {
    let scores = model.predict_scores(features)?;
    let loss: f64 = scores.chunks_exact(model.num_classes()).zip(targets).map(|(s, t)| cross_entropy(s, t.index())).sum();
    Ok(loss + regularization(model))
}

fn total_loss(scores: &[f64], num_classes: usize, targets: &[RampClass]) -> f64 {
    scores.chunks_exact(num_classes).zip(targets).map(|(s, t)| cross_entropy(s, t.index())).sum()
}

pub(crate) fn train_in_current_pool(
    features: &FeatureMatrix,
    targets: &[RampClass],
    num_classes: usize,
    params: &HyperParams,
) -> Result<Training> {
    validate(features, targets, num_classes, params)?;
    let n = features.n_rows();
    let c = num_classes;
    let split_params = SplitParams::from(params);
    let sorted = SortedColumns::new(features);

    let base = prior_log_odds(targets, c);
    let mut model = GbrtModel::empty(c, features.n_cols(), base.clone(), *params);
    let mut scores: Vec<f64> = base.iter().copied().cycle().take(n * c).collect();
    let mut grads = vec![GradientPair::default(); n * c];
    let mut penalty = 0.0;
    let mut objective_trace = vec![total_loss(&scores, c, targets)];
    let mut step_scales = Vec::with_capacity(params.n_estimators);

    for _ in 0..params.n_estimators {
        scores
            .par_chunks(c)
            .zip(grads.par_chunks_mut(c))
            .zip(targets.par_iter())
            .for_each_init(|| vec![0.0; c], |probs, ((s, g), t)| row_gradients(s, t.index(), probs, g));

        let trees: Vec<Tree> = (0..c)
            .into_par_iter()
            .map(|class| {
                let class_grads: Vec<GradientPair> = grads.iter().skip(class).step_by(c).copied().collect();
                grow_tree_sorted(&sorted, &class_grads, split_params, params.max_depth)
            })
            .collect();

        let leaves: Vec<usize> = features.rows().flat_map(|row| trees.iter().map(move |t| t.leaf_index(row))).collect();
        let previous = *objective_trace.last().expect("trace starts with the initial objective");
        // A rejected round leaves the scores, hence the next gradients, unchanged,
        // so every later round would be rejected as well.
        let Some(step) = line_search(&trees, &leaves, &scores, targets, params, penalty, previous) else {
            break;
        };
        scores = step.scores;
        penalty = step.penalty;
        objective_trace.push(step.objective);
        step_scales.push(step.scale);
        model.push_round(step.trees);
    }
    Ok(Training { model, objective_trace, step_scales })
}

/// Halvings tried before a round is rejected.
const MAX_HALVINGS: usize = 40;

struct Step {
    trees: Vec<Tree>,
    scores: Vec<f64>,
    penalty: f64,
    objective: f64,
    scale: f64,
}

/// Scales the round's leaf weights by 1, 1/2, 1/4, ... and keeps the first
/// scale whose regularized objective does not exceed `previous`; `None` if
/// even the smallest step raises it, which happens when `gamma` outweighs
/// the attainable loss reduction.
///
/// Newton leaf values come from a diagonal quadratic model of the loss and
/// can overshoot badly on rows whose hessian `p(1 - p)` is tiny.
fn line_search(
    trees: &[Tree],
    leaves: &[usize],
    scores: &[f64],
    targets: &[RampClass],
    params: &HyperParams,
    penalty: f64,
    previous: f64,
) -> Option<Step> {
    let c = trees.len();
    let eta = params.learning_rate;
    let evaluate = |trees: Vec<Tree>, scale: f64| {
        let weights: Vec<Vec<f64>> = trees
            .iter()
            .map(|t| {
                t.nodes
                    .iter()
                    .map(|n| match n {
                        TreeNode::Leaf { weight } => *weight,
                        TreeNode::Split { .. } => 0.0,
                    })
                    .collect()
            })
            .collect();
        let mut next = scores.to_vec();
        next.par_chunks_mut(c).zip(leaves.par_chunks(c)).for_each(|(s, leaf)| {
            for (class, o) in s.iter_mut().enumerate() {
                *o += eta * weights[class][leaf[class]];
            }
        });
        let penalty = penalty + trees.iter().map(|t| tree_penalty(t, params)).sum::<f64>();
        let objective = total_loss(&next, c, targets) + penalty;
        Step { trees, scores: next, penalty, objective, scale }
    };

    let mut scale = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let candidate = evaluate(trees.iter().map(|t| t.scaled(scale)).collect(), scale);
        if candidate.objective <= previous {
            return Some(candidate);
        }
        scale *= 0.5;
    }
    None
}

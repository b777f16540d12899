//! Stratified splitting, k-fold grid search and classification metrics.
//!
//! Per-class precision, recall and F1 are one-vs-rest counts read off a
//! confusion matrix; an undefined ratio (zero denominator) counts as 0. The
//! overall F1 is the unweighted mean over all classes and the rare-event F1
//! the unweighted mean over the rare classes. Across horizons every figure is
//! averaged without weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbrt::{self, GbrtModel, HyperParams};
use crate::labeling::{HorizonSpec, LabeledDataset, RampClass};
use crate::matrix::FeatureMatrix;

fn indices_by_class(targets: &[RampClass], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, t) in targets.iter().enumerate() {
        if t.id() > num_classes {
            return Err(Error::UnknownClass { id: t.id(), num_classes });
        }
        by_class[t.index()].push(i);
    }
    Ok(by_class)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratifiedSplit {
    /// Sorted row indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Classes with a single instance; that instance is kept in `train`.
    pub singleton_classes: Vec<RampClass>,
}

/// Per-class test allocation by largest remainder.
///
/// The test set gets `round(n * fraction)` rows, where `n` excludes singleton
/// classes. Each class first receives `floor(count * fraction)`; leftover
/// slots go to the largest fractional parts, lower class id first on ties,
/// one per class. A class never gives up all of its rows; when that cap
/// binds the test set ends up smaller than the target rather than pushing a
/// class more than one row past its quota.
pub fn allocate_test_counts(counts: &[usize], test_fraction: f64) -> Vec<usize> {
    let eligible = |c: usize| c >= 2;
    let n: usize = counts.iter().copied().filter(|&c| eligible(c)).sum();
    let target = (n as f64 * test_fraction).round() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&c| if eligible(c) { c as f64 * test_fraction } else { 0.0 }).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).filter(|&i| eligible(counts[i])).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut assigned: usize = alloc.iter().sum();
    for &i in &order {
        if assigned >= target {
            break;
        }
        if alloc[i] + 1 < counts[i] {
            alloc[i] += 1;
            assigned += 1;
        }
    }
    for (a, &c) in alloc.iter_mut().zip(counts) {
        if eligible(c) {
            *a = (*a).min(c - 1);
        }
    }
    alloc
}

/// Shuffles each class with a seeded generator and moves its allocated share to the test set.
pub fn stratified_split(targets: &[RampClass], num_classes: usize, test_fraction: f64, seed: u64) -> Result<StratifiedSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let by_class = indices_by_class(targets, num_classes)?;
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let alloc = allocate_test_counts(&counts, test_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(targets.len());
    let mut test = Vec::new();
    let mut singleton_classes = Vec::new();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() == 1 {
            singleton_classes.push(RampClass::from_index(class));
        }
        idx.shuffle(&mut rng);
        test.extend_from_slice(&idx[..alloc[class]]);
        train.extend_from_slice(&idx[alloc[class]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(StratifiedSplit { train, test, singleton_classes })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KFolds {
    /// Validation indices of each fold, sorted.
    pub folds: Vec<Vec<usize>>,
    /// Classes with fewer instances than folds; some folds lack them.
    pub undersized_classes: Vec<RampClass>,
}

impl KFolds {
    /// `(train, validation)` indices for fold `k`.
    pub fn split(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train: Vec<usize> = self.folds.iter().enumerate().filter(|(j, _)| *j != k).flat_map(|(_, f)| f.iter().copied()).collect();
        train.sort_unstable();
        (train, self.folds[k].clone())
    }
}

/// Shuffles each class and deals its rows round-robin over `k` folds,
/// continuing the deal across classes so fold sizes differ by at most one.
pub fn stratified_kfold(targets: &[RampClass], num_classes: usize, k: usize, seed: u64) -> Result<KFolds> {
    if k < 2 {
        return Err(Error::InfeasibleFolds { folds: k, reason: "need at least 2 folds".into() });
    }
    if targets.len() < k {
        return Err(Error::InfeasibleFolds { folds: k, reason: format!("only {} rows", targets.len()) });
    }
    let by_class = indices_by_class(targets, num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut undersized_classes = Vec::new();
    let mut next = 0;
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if !idx.is_empty() && idx.len() < k {
            undersized_classes.push(RampClass::from_index(class));
        }
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(KFolds { folds, undersized_classes })
}

/// `counts[a][p]` = instances of true class `a + 1` predicted as `p + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix { num_classes, counts: vec![vec![0; num_classes]; num_classes] }
    }

    pub fn get(&self, truth: RampClass, predicted: RampClass) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn true_positives(&self, class: RampClass) -> u64 {
        self.counts[class.index()][class.index()]
    }

    pub fn false_positives(&self, class: RampClass) -> u64 {
        let c = class.index();
        (0..self.num_classes).map(|a| self.counts[a][c]).sum::<u64>() - self.counts[c][c]
    }

    pub fn false_negatives(&self, class: RampClass) -> u64 {
        let c = class.index();
        self.counts[c].iter().sum::<u64>() - self.counts[c][c]
    }
}

pub fn confusion(truth: &[RampClass], predicted: &[RampClass], num_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch { left: truth.len(), right: predicted.len() });
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&a, &p) in truth.iter().zip(predicted) {
        for c in [a, p] {
            if c.id() > num_classes {
                return Err(Error::UnknownClass { id: c.id(), num_classes });
            }
        }
        cm.counts[a.index()][p.index()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: RampClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true instances of the class.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: Option<HorizonSpec>,
    pub total: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean of per-class F1.
    pub overall_f1: f64,
    /// Unweighted mean of F1 over `rare_classes`.
    pub rare_f1: f64,
    pub rare_classes: Vec<RampClass>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(cm: &ConfusionMatrix, rare_classes: &[RampClass]) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyDataset { needed: 1 });
    }
    if let Some(c) = rare_classes.iter().find(|c| c.id() > cm.num_classes) {
        return Err(Error::UnknownClass { id: c.id(), num_classes: cm.num_classes });
    }
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes)
        .map(|i| {
            let class = RampClass::from_index(i);
            let tp = cm.true_positives(class);
            let precision = ratio(tp, tp + cm.false_positives(class));
            let recall = ratio(tp, tp + cm.false_negatives(class));
            ClassMetrics { class, precision, recall, f1: f1_score(precision, recall), support: tp + cm.false_negatives(class) }
        })
        .collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };
    let overall_f1 = mean(&mut per_class.iter().map(|m| m.f1));
    let rare_f1 = mean(&mut rare_classes.iter().map(|c| per_class[c.index()].f1));
    Ok(MetricsReport {
        horizon: None,
        total,
        accuracy: ratio(cm.correct(), total),
        per_class,
        overall_f1,
        rare_f1,
        rare_classes: rare_classes.to_vec(),
    })
}

/// Confusion matrix and metrics in one call.
pub fn score(truth: &[RampClass], predicted: &[RampClass], num_classes: usize, rare_classes: &[RampClass]) -> Result<MetricsReport> {
    metrics(&confusion(truth, predicted, num_classes)?, rare_classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub n_estimators_choices: Vec<usize>,
    pub max_depth_choices: Vec<usize>,
    pub folds: usize,
}

impl ParamGrid {
    /// Rounds in {50, 100, 200}, depth in {2, 4, 6}, 3 folds.
    pub fn standard() -> Self {
        ParamGrid { n_estimators_choices: vec![50, 100, 200], max_depth_choices: vec![2, 4, 6], folds: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_estimators_choices.is_empty() || self.max_depth_choices.is_empty() {
            return Err(Error::InvalidParams("grid choice lists must be non-empty".into()));
        }
        if self.folds < 2 {
            return Err(Error::InfeasibleFolds { folds: self.folds, reason: "need at least 2 folds".into() });
        }
        Ok(())
    }

    /// Every `(n_estimators, max_depth)` pair, rounds-major.
    pub fn combinations(&self) -> Vec<(usize, usize)> {
        self.n_estimators_choices.iter().flat_map(|&n| self.max_depth_choices.iter().map(move |&d| (n, d))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub n_estimators: usize,
    pub max_depth: usize,
    /// Validation macro-F1 per fold.
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: HyperParams,
    pub table: Vec<GridRow>,
}

impl GridSearchResult {
    pub fn render_table(&self) -> String {
        let folds = self.table.first().map_or(0, |r| r.fold_scores.len());
        let mut out = format!("{:>12} {:>9}", "n_estimators", "max_depth");
        for k in 0..folds {
            out.push_str(&format!(" {:>8}", format!("fold_{k}")));
        }
        out.push_str(&format!(" {:>8}\n", "mean_f1"));
        for row in &self.table {
            let marker = if row.n_estimators == self.best.n_estimators && row.max_depth == self.best.max_depth { " *" } else { "" };
            out.push_str(&format!("{:>12} {:>9}", row.n_estimators, row.max_depth));
            for s in &row.fold_scores {
                out.push_str(&format!(" {s:>8.4}"));
            }
            out.push_str(&format!(" {:>8.4}{marker}\n", row.mean_score));
        }
        out
    }
}

/// Picks the row with the highest mean score; ties go to fewer rounds, then shallower trees.
fn select_best(table: &[GridRow]) -> &GridRow {
    let key = |r: &GridRow| (r.n_estimators, r.max_depth);
    table
        .iter()
        .reduce(|best, r| if r.mean_score > best.mean_score || (r.mean_score == best.mean_score && key(r) < key(best)) { r } else { best })
        .expect("grid has at least one combination")
}

/// k-fold stratified cross-validation over every grid combination, scored
/// by validation macro-F1.
///
/// All `combinations x folds` fits run on one pool of `workers` threads and
/// the table is assembled by index, so the result does not depend on the
/// worker count.
pub fn grid_search(
    features: &FeatureMatrix,
    targets: &[RampClass],
    num_classes: usize,
    grid: &ParamGrid,
    fixed: &HyperParams,
    seed: u64,
    workers: usize,
) -> Result<GridSearchResult> {
    grid.validate()?;
    let folds = stratified_kfold(targets, num_classes, grid.folds, seed)?;
    let combos = grid.combinations();
    let jobs: Vec<(usize, usize)> = (0..combos.len()).flat_map(|c| (0..grid.folds).map(move |k| (c, k))).collect();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..grid.folds).map(|k| folds.split(k)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start {workers} workers: {e}")))?;
    let scores: Vec<f64> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, k)| {
                let (n_estimators, max_depth) = combos[c];
                let params = HyperParams { n_estimators, max_depth, ..*fixed };
                let (train_idx, val_idx) = &splits[k];
                let train_y: Vec<RampClass> = train_idx.iter().map(|&i| targets[i]).collect();
                let val_y: Vec<RampClass> = val_idx.iter().map(|&i| targets[i]).collect();
                let model = gbrt::train::train_in_current_pool(&features.select_rows(train_idx), &train_y, num_classes, &params)?.model;
                let predicted = model.predict_class(&features.select_rows(val_idx))?;
                Ok(score(&val_y, &predicted, num_classes, &[])?.overall_f1)
            })
            .collect::<Result<Vec<f64>>>()
    })?;

    let table: Vec<GridRow> = combos
        .iter()
        .zip(scores.chunks_exact(grid.folds))
        .map(|(&(n_estimators, max_depth), fold_scores)| GridRow {
            n_estimators,
            max_depth,
            fold_scores: fold_scores.to_vec(),
            mean_score: fold_scores.iter().sum::<f64>() / fold_scores.len() as f64,
        })
        .collect();
    let best_row = select_best(&table);
    let best = HyperParams { n_estimators: best_row.n_estimators, max_depth: best_row.max_depth, ..*fixed };
    Ok(GridSearchResult { best, table })
}

/// Per-horizon reports and their unweighted means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHorizonReport {
    pub per_horizon: Vec<MetricsReport>,
    /// Mean of per-horizon accuracies.
    pub accuracy: f64,
    /// Correct over total, pooled across horizons.
    pub pooled_accuracy: f64,
    pub overall_f1: f64,
    pub rare_f1: f64,
}

pub fn aggregate(per_horizon: Vec<MetricsReport>) -> Result<MultiHorizonReport> {
    if per_horizon.is_empty() {
        return Err(Error::EmptyDataset { needed: 1 });
    }
    let n = per_horizon.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| per_horizon.iter().map(f).sum::<f64>() / n;
    let correct: f64 = per_horizon.iter().map(|r| r.accuracy * r.total as f64).sum();
    let total: u64 = per_horizon.iter().map(|r| r.total).sum();
    Ok(MultiHorizonReport {
        accuracy: mean(|r| r.accuracy),
        pooled_accuracy: correct / total as f64,
        overall_f1: mean(|r| r.overall_f1),
        rare_f1: mean(|r| r.rare_f1),
        per_horizon,
    })
}

/// Scores one model per horizon on its test set and averages across horizons.
pub fn evaluate_multi_horizon(pairs: &[(&GbrtModel, &LabeledDataset)]) -> Result<MultiHorizonReport> {
    let reports = pairs
        .iter()
        .map(|(model, test)| {
            if let Some(h) = model.horizon() {
                if h.steps_ahead != test.horizon.steps_ahead {
                    return Err(Error::HorizonMismatch { model: h.steps_ahead, data: test.horizon.steps_ahead });
                }
            }
            let predicted = model.predict_class(&test.features)?;
            let mut report = score(&test.targets, &predicted, test.num_classes(), &test.thresholds.rare_classes())?;
            report.horizon = Some(test.horizon);
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(reports)
}

/// One line of a model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub accuracy: f64,
    pub overall_f1: f64,
    pub rare_f1: f64,
    /// Mean wall-clock prediction time per example, in seconds.
    pub test_time_per_example_s: Option<f64>,
}

impl ModelSummary {
    pub fn from_report(model: impl Into<String>, report: &MultiHorizonReport, time: Option<f64>) -> Self {
        ModelSummary {
            model: model.into(),
            accuracy: report.accuracy,
            overall_f1: report.overall_f1,
            rare_f1: report.rare_f1,
            test_time_per_example_s: time,
        }
    }
}

pub fn render_summary_table(rows: &[ModelSummary]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut out =
        format!("{:<width$} | {:>8} | {:>10} | {:>13} | {:>16}\n", "Model", "Accuracy", "Overall F1", "Rare-event F1", "Test time (s/ex)");
    out.push_str(&format!("{}\n", "-".repeat(width + 60)));
    for r in rows {
        let time = r.test_time_per_example_s.map_or("-".to_string(), |t| format!("{t:.3e}"));
        out.push_str(&format!("{:<width$} | {:>8.4} | {:>10.4} | {:>13.4} | {:>16}\n", r.model, r.accuracy, r.overall_f1, r.rare_f1, time));
    }
    out
}

pub fn render_horizon_table(model: &str, report: &MultiHorizonReport) -> String {
    let mut out =
        format!("{model}\n{:>8} | {:>7} | {:>8} | {:>10} | {:>13}\n", "Horizon", "Rows", "Accuracy", "Overall F1", "Rare-event F1");
    for r in &report.per_horizon {
        let s = r.horizon.map_or("-".to_string(), |h| format!("S={}", h.steps_ahead));
        out.push_str(&format!("{:>8} | {:>7} | {:>8.4} | {:>10.4} | {:>13.4}\n", s, r.total, r.accuracy, r.overall_f1, r.rare_f1));
    }
    out.push_str(&format!(
        "{:>8} | {:>7} | {:>8.4} | {:>10.4} | {:>13.4}\n",
        "mean", "", report.accuracy, report.overall_f1, report.rare_f1
    ));
    out
}

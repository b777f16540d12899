//! Reference predictors: persistence of the last observed ramp class, and the
//! majority training class.

use crate::error::{Error, Result};
use crate::ingest::WindPowerSeries;
use crate::labeling::{HorizonSpec, RampClass, ThresholdSet};

/// Predicts that the next `S`-step window has the class of the window that just ended.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistencePredictor {
    pub horizon: HorizonSpec,
    pub thresholds: ThresholdSet,
}

/// Aligned ground truth and persistence predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceOutput {
    pub truth: Vec<RampClass>,
    pub predicted: Vec<RampClass>,
    /// Anchor `t` of each prediction, matching the dataset anchors.
    pub anchor_timestamps: Vec<i64>,
}

impl PersistencePredictor {
    pub fn new(horizon: HorizonSpec, thresholds: ThresholdSet) -> Self {
        PersistencePredictor { horizon, thresholds }
    }

    /// For every anchor `t` that also has a full `S`-step window ending at
    /// `t`, truth is the class of `w(t+S) - w(t)` and the prediction is the
    /// class of `w(t) - w(t-S)`.
    pub fn predict(&self, series: &WindPowerSeries) -> Result<PersistenceOutput> {
        let (lags, ahead) = (self.horizon.lag_count, self.horizon.steps_ahead);
        let first_anchor = (lags - 1).max(ahead);
        let mut out = PersistenceOutput { truth: Vec::new(), predicted: Vec::new(), anchor_timestamps: Vec::new() };
        for seg in series.segments() {
            if seg.len() < first_anchor + ahead + 1 {
                continue;
            }
            for t in first_anchor..seg.len() - ahead {
                let w = |i: usize| seg[i].power_mw;
                out.truth.push(self.thresholds.assign_class(w(t + ahead) - w(t))?);
                out.predicted.push(self.thresholds.assign_class(w(t) - w(t - ahead))?);
                out.anchor_timestamps.push(seg[t].timestamp);
            }
        }
        if out.truth.is_empty() {
            return Err(Error::EmptyDataset { needed: first_anchor + ahead + 1 });
        }
        Ok(out)
    }
}

pub fn persistence_predict(series: &WindPowerSeries, horizon: HorizonSpec, thresholds: &ThresholdSet) -> Result<PersistenceOutput> {
    PersistencePredictor::new(horizon, thresholds.clone()).predict(series)
}

/// Modal class of `train_targets`, lower id on ties.
pub fn majority_class(train_targets: &[RampClass]) -> Result<RampClass> {
    let max_id = train_targets.iter().map(|c| c.id()).max().ok_or(Error::EmptyDataset { needed: 1 })?;
    let mut counts = vec![0usize; max_id];
    for c in train_targets {
        counts[c.index()] += 1;
    }
    let mut best = 0;
    for (i, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = i;
        }
    }
    Ok(RampClass::from_index(best))
}

pub fn majority_predict(train_targets: &[RampClass], n_test: usize) -> Result<Vec<RampClass>> {
    Ok(vec![majority_class(train_targets)?; n_test])
}

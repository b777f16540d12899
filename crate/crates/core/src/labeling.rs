//! Ramp classes, differencing and lag-window dataset construction.
//!
//! With thresholds `T_1 < … < T_m` the real line is cut at
//! `-T_m, …, -T_1, 0, T_1, …, T_m` into `2(m + 1)` half-open intervals
//! `[b_k, b_{k+1})`, numbered from 1 (most severe down-ramp) upwards. For a
//! single threshold `T` that gives
//!
//! | class | interval        |
//! |-------|-----------------|
//! | 1     | `x < -T`        |
//! | 2     | `-T <= x < 0`   |
//! | 3     | `0 <= x < T`    |
//! | 4     | `x >= T`        |

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::WindPowerSeries;
use crate::matrix::FeatureMatrix;

/// A ramp class id, starting at 1 for the most severe down-ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RampClass(u16);

impl RampClass {
    /// Panics if `id` is zero.
    pub fn new(id: usize) -> Self {
        assert!(id >= 1 && id <= u16::MAX as usize, "ramp class ids start at 1");
        RampClass(id as u16)
    }

    pub fn from_index(index: usize) -> Self {
        RampClass::new(index + 1)
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    /// Zero-based position, as used for score and probability columns.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn checked(id: usize, num_classes: usize) -> Result<Self> {
        if id == 0 || id > num_classes {
            return Err(Error::UnknownClass { id, num_classes });
        }
        Ok(RampClass::new(id))
    }
}

impl fmt::Display for RampClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered positive ramp thresholds in megawatts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds", into = "RawThresholds")]
pub struct ThresholdSet {
    thresholds_mw: Vec<f64>,
    /// Interval boundaries `-T_m..-T_1, 0, T_1..T_m`.
    boundaries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawThresholds {
    thresholds_mw: Vec<f64>,
}

impl TryFrom<RawThresholds> for ThresholdSet {
    type Error = Error;
    fn try_from(raw: RawThresholds) -> Result<Self> {
        ThresholdSet::new(raw.thresholds_mw)
    }
}

impl From<ThresholdSet> for RawThresholds {
    fn from(t: ThresholdSet) -> Self {
        RawThresholds { thresholds_mw: t.thresholds_mw }
    }
}

impl ThresholdSet {
    pub fn new(thresholds_mw: Vec<f64>) -> Result<Self> {
        if thresholds_mw.is_empty() {
            return Err(Error::InvalidThresholds("at least one threshold is required".into()));
        }
        if let Some(t) = thresholds_mw.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidThresholds(format!("thresholds must be finite and positive, got {t}")));
        }
        if thresholds_mw.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidThresholds("thresholds must be strictly increasing".into()));
        }
        let boundaries = thresholds_mw.iter().rev().map(|t| -t).chain(std::iter::once(0.0)).chain(thresholds_mw.iter().copied()).collect();
        Ok(ThresholdSet { thresholds_mw, boundaries })
    }

    pub fn single(threshold_mw: f64) -> Result<Self> {
        ThresholdSet::new(vec![threshold_mw])
    }

    /// A single threshold at `fraction` of rated capacity.
    pub fn from_capacity_fraction(rated_capacity_mw: f64, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidThresholds(format!("capacity fraction must be in (0, 1], got {fraction}")));
        }
        ThresholdSet::single(rated_capacity_mw * fraction)
    }

    pub fn thresholds_mw(&self) -> &[f64] {
        &self.thresholds_mw
    }

    pub fn num_classes(&self) -> usize {
        2 * (self.thresholds_mw.len() + 1)
    }

    /// The two most severe classes, one per direction.
    pub fn rare_classes(&self) -> Vec<RampClass> {
        vec![RampClass::new(1), RampClass::new(self.num_classes())]
    }

    pub fn is_rare(&self, class: RampClass) -> bool {
        class.id() == 1 || class.id() == self.num_classes()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        ThresholdSet::new(self.thresholds_mw.iter().map(|t| t * factor).collect())
    }

    pub fn assign_class(&self, delta_mw: f64) -> Result<RampClass> {
        if !delta_mw.is_finite() {
            return Err(Error::NonFinite(format!("ramp delta {delta_mw}")));
        }
        let below_or_equal = self.boundaries.partition_point(|b| *b <= delta_mw);
        Ok(RampClass::new(below_or_equal + 1))
    }
}

/// Forecast horizon `S` and lag window length `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub steps_ahead: usize,
    pub lag_count: usize,
}

impl HorizonSpec {
    pub fn new(steps_ahead: usize, lag_count: usize) -> Result<Self> {
        if steps_ahead == 0 {
            return Err(Error::InvalidHorizon("steps_ahead must be at least 1".into()));
        }
        if lag_count == 0 {
            return Err(Error::InvalidHorizon("lag_count must be at least 1".into()));
        }
        Ok(HorizonSpec { steps_ahead, lag_count })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Differences {
    /// `(timestamp of the later point, w(t) - w(t - step))`.
    pub deltas: Vec<(i64, f64)>,
    /// Indices of segments too short to produce any difference.
    pub skipped_segments: Vec<usize>,
}

pub fn diff_series(series: &WindPowerSeries, step: usize) -> Result<Differences> {
    if step == 0 {
        return Err(Error::InvalidHorizon("difference step must be at least 1".into()));
    }
    let mut deltas = Vec::new();
    let mut skipped_segments = Vec::new();
    for (idx, seg) in series.segments().enumerate() {
        if seg.len() <= step {
            skipped_segments.push(idx);
            continue;
        }
        deltas.extend(seg.windows(step + 1).map(|w| (w[step].timestamp, w[step].power_mw - w[0].power_mw)));
    }
    Ok(Differences { deltas, skipped_segments })
}

/// Lag windows paired with the ramp class of the following `S`-step change.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// Row `i` is `(w(t-L+1), …, w(t))` for anchor `t = anchor_timestamps[i]`.
    pub features: FeatureMatrix,
    pub targets: Vec<RampClass>,
    pub anchor_timestamps: Vec<i64>,
    pub horizon: HorizonSpec,
    pub thresholds: ThresholdSet,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.thresholds.num_classes()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            anchor_timestamps: indices.iter().map(|&i| self.anchor_timestamps[i]).collect(),
            horizon: self.horizon,
            thresholds: self.thresholds.clone(),
        }
    }

    pub fn class_distribution(&self) -> ClassDistribution {
        class_distribution(&self.targets, self.num_classes())
    }
}

/// Number of rows [`build_dataset`] yields for one segment.
pub fn rows_in_segment(segment_len: usize, horizon: HorizonSpec) -> usize {
    (segment_len + 1).saturating_sub(horizon.lag_count + horizon.steps_ahead)
}

/// Builds one lag-window row per anchor `t` with `L` points at or before `t`
/// and `w(t + S)` inside the same segment; the target is the class of
/// `w(t + S) - w(t)`.
pub fn build_dataset(series: &WindPowerSeries, horizon: HorizonSpec, thresholds: &ThresholdSet) -> Result<LabeledDataset> {
    let (lags, ahead) = (horizon.lag_count, horizon.steps_ahead);
    let n: usize = series.segments().map(|s| rows_in_segment(s.len(), horizon)).sum();
    if n == 0 {
        return Err(Error::EmptyDataset { needed: lags + ahead });
    }

    let mut data = Vec::with_capacity(n * lags);
    let mut targets = Vec::with_capacity(n);
    let mut anchor_timestamps = Vec::with_capacity(n);
    for seg in series.segments() {
        if rows_in_segment(seg.len(), horizon) == 0 {
            continue;
        }
        for anchor in lags - 1..seg.len() - ahead {
            data.extend(seg[anchor + 1 - lags..=anchor].iter().map(|p| p.power_mw));
            targets.push(thresholds.assign_class(seg[anchor + ahead].power_mw - seg[anchor].power_mw)?);
            anchor_timestamps.push(seg[anchor].timestamp);
        }
    }
    Ok(LabeledDataset { features: FeatureMatrix::new(n, lags, data)?, targets, anchor_timestamps, horizon, thresholds: thresholds.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub total: usize,
    /// Indexed by class id - 1.
    pub counts: Vec<usize>,
    pub percentages: Vec<f64>,
}

impl ClassDistribution {
    pub fn fraction_of(&self, classes: &[RampClass]) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        classes.iter().map(|c| self.counts[c.index()]).sum::<usize>() as f64 / self.total as f64
    }

    /// Plain-text table with class, count and percentage columns.
    pub fn render_table(&self) -> String {
        let mut out = format!("{:>5} | {:>18} | {:>10}\n", "Class", "Number of examples", "Percentage");
        out.push_str(&format!("{}\n", "-".repeat(41)));
        for (i, (count, pct)) in self.counts.iter().zip(&self.percentages).enumerate() {
            out.push_str(&format!("{:>5} | {:>18} | {:>10.2}\n", i + 1, count, pct));
        }
        out.push_str(&format!("{:>5} | {:>18} | {:>10.2}\n", "total", self.total, 100.0 * (self.total > 0) as u8 as f64));
        out
    }
}

pub fn class_distribution(targets: &[RampClass], num_classes: usize) -> ClassDistribution {
    let mut counts = vec![0usize; num_classes];
    for t in targets {
        counts[t.index()] += 1;
    }
    let total = targets.len();
    let percentages = counts.iter().map(|&c| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 }).collect();
    ClassDistribution { total, counts, percentages }
}

const DATASET_FORMAT_VERSION: u32 = 1;

/// Sidecar metadata written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub horizon: HorizonSpec,
    pub thresholds: ThresholdSet,
    pub num_classes: usize,
    pub rows: usize,
}

/// Column header for lag window position `j`; `lag_k` holds `w(t - k)`.
fn lag_header(lag_count: usize, j: usize) -> String {
    format!("lag_{}", lag_count - 1 - j)
}

/// Writes `anchor_timestamp, lag_{L-1}, …, lag_0, target` rows.
pub fn write_dataset<W: Write>(dataset: &LabeledDataset, writer: W) -> Result<()> {
    let lags = dataset.horizon.lag_count;
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["anchor_timestamp".to_string()];
    header.extend((0..lags).map(|j| lag_header(lags, j)));
    header.push("target".to_string());
    wtr.write_record(&header)?;
    let mut record = Vec::with_capacity(lags + 2);
    for (i, row) in dataset.features.rows().enumerate() {
        record.clear();
        record.push(dataset.anchor_timestamps[i].to_string());
        record.extend(row.iter().map(|v| v.to_string()));
        record.push(dataset.targets[i].to_string());
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R, meta: &DatasetMeta) -> Result<LabeledDataset> {
    if meta.version != DATASET_FORMAT_VERSION {
        return Err(Error::MalformedRow { line: 0, message: format!("unsupported dataset version {}", meta.version) });
    }
    let lags = meta.horizon.lag_count;
    let num_classes = meta.thresholds.num_classes();
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MalformedRow { line: 1, message: format!("missing column `{name}`") })
    };
    let ts_col = find("anchor_timestamp")?;
    let target_col = find("target")?;
    let lag_cols: Vec<usize> = (0..lags).map(|j| find(&lag_header(lags, j))).collect::<Result<_>>()?;

    let mut data = Vec::with_capacity(meta.rows * lags);
    let mut targets = Vec::with_capacity(meta.rows);
    let mut anchor_timestamps = Vec::with_capacity(meta.rows);
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::MalformedRow { line, message: format!("cannot parse {what}") };
        let ts: i64 = record.get(ts_col).and_then(|v| v.parse().ok()).ok_or_else(|| bad("anchor_timestamp"))?;
        for &c in &lag_cols {
            let v: f64 = record.get(c).and_then(|v| v.parse().ok()).ok_or_else(|| bad("lag value"))?;
            if !v.is_finite() {
                return Err(bad("lag value (non-finite)"));
            }
            data.push(v);
        }
        let id: usize = record.get(target_col).and_then(|v| v.parse().ok()).ok_or_else(|| bad("target"))?;
        targets.push(RampClass::checked(id, num_classes)?);
        anchor_timestamps.push(ts);
    }
    if targets.len() != meta.rows {
        return Err(Error::LengthMismatch { left: meta.rows, right: targets.len() });
    }
    Ok(LabeledDataset {
        features: FeatureMatrix::new(targets.len(), lags, data)?,
        targets,
        anchor_timestamps,
        horizon: meta.horizon,
        thresholds: meta.thresholds.clone(),
    })
}

pub fn dataset_meta(dataset: &LabeledDataset) -> DatasetMeta {
    DatasetMeta {
        version: DATASET_FORMAT_VERSION,
        horizon: dataset.horizon,
        thresholds: dataset.thresholds.clone(),
        num_classes: dataset.num_classes(),
        rows: dataset.len(),
    }
}

pub fn save_dataset(dataset: &LabeledDataset, csv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
    let csv_path = csv_path.as_ref();
    let meta_path = meta_path.as_ref();
    let file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    write_dataset(dataset, BufWriter::new(file))?;
    let meta = serde_json::to_string_pretty(&dataset_meta(dataset))?;
    std::fs::write(meta_path, meta + "\n").map_err(|e| Error::io(meta_path, e))
}

pub fn load_dataset(csv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let csv_path = csv_path.as_ref();
    let meta_path = meta_path.as_ref();
    let meta_text = std::fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)?;
    let file = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    read_dataset(BufReader::new(file), &meta)
}

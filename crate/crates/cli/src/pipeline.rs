//! The pipeline stages behind each command.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rampcast::baselines::{majority_predict, persistence_predict};
use rampcast::evaluation::{
    aggregate, grid_search, render_horizon_table, render_summary_table, score, stratified_split, GridSearchResult, MetricsReport,
    ModelSummary, MultiHorizonReport, StratifiedSplit,
};
use rampcast::gbrt::{train_dataset, GbrtModel};
use rampcast::ingest::{load_series, series_stats, LoadReport, LoadedSeries, SeriesStats};
use rampcast::labeling::{build_dataset, load_dataset, save_dataset, ClassDistribution, HorizonSpec, LabeledDataset, RampClass};
use rampcast::matrix::FeatureMatrix;
use rampcast::Error;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

pub const REPORT_VERSION: u32 = 1;

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn datasets(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn dataset(&self, s: usize) -> PathBuf {
        self.datasets().join(format!("dataset_h{s}.csv"))
    }

    pub fn dataset_meta(&self, s: usize) -> PathBuf {
        self.datasets().join(format!("dataset_h{s}.meta.json"))
    }

    pub fn split(&self, s: usize) -> PathBuf {
        self.datasets().join(format!("split_h{s}.json"))
    }

    pub fn model(&self, s: usize) -> PathBuf {
        self.models().join(format!("gbrt_h{s}.json"))
    }

    pub fn grid_json(&self, s: usize) -> PathBuf {
        self.reports().join(format!("grid_h{s}.json"))
    }

    pub fn grid_text(&self, s: usize) -> PathBuf {
        self.reports().join(format!("grid_h{s}.txt"))
    }

    fn create_dirs(&self) -> Result<()> {
        for dir in [self.datasets(), self.models(), self.reports()] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(path.display().to_string()))
    }
}

fn load_input(cfg: &PipelineConfig) -> Result<LoadedSeries> {
    Ok(load_series(cfg.data_path()?, &cfg.load_options()?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonDistribution {
    pub steps_ahead: usize,
    pub lag_count: usize,
    pub distribution: ClassDistribution,
}

/// Series summary plus the class balance at every configured horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub version: u32,
    pub site_id: String,
    pub thresholds_mw: Vec<f64>,
    pub series: SeriesStats,
    pub load: LoadReport,
    pub horizons: Vec<HorizonDistribution>,
}

impl DistributionReport {
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "site {:?}: {} points, mean {:.4} MW ({:.2}% of capacity), thresholds {:?} MW\n",
            self.site_id,
            self.series.count,
            self.series.mean_mw,
            100.0 * self.series.capacity_fraction,
            self.thresholds_mw
        );
        for h in &self.horizons {
            out.push_str(&format!("\nS = {} (L = {})\n", h.steps_ahead, h.lag_count));
            out.push_str(&h.distribution.render_table());
        }
        out
    }
}

fn datasets_for(cfg: &PipelineConfig, loaded: &LoadedSeries) -> Result<Vec<LabeledDataset>> {
    let thresholds = cfg.thresholds()?;
    cfg.horizon_specs()?.into_iter().map(|h| Ok(build_dataset(&loaded.series, h, &thresholds)?)).collect()
}

fn distribution_report(cfg: &PipelineConfig, loaded: &LoadedSeries, datasets: &[LabeledDataset]) -> Result<DistributionReport> {
    Ok(DistributionReport {
        version: REPORT_VERSION,
        site_id: cfg.site_id.clone(),
        thresholds_mw: cfg.thresholds()?.thresholds_mw().to_vec(),
        series: series_stats(&loaded.series)?,
        load: loaded.report.clone(),
        horizons: datasets
            .iter()
            .map(|d| HorizonDistribution {
                steps_ahead: d.horizon.steps_ahead,
                lag_count: d.horizon.lag_count,
                distribution: d.class_distribution(),
            })
            .collect(),
    })
}

/// Computes the class distribution report without writing anything.
pub fn cmd_distribution(cfg: &PipelineConfig) -> Result<DistributionReport> {
    cfg.validate()?;
    let loaded = load_input(cfg)?;
    let datasets = datasets_for(cfg, &loaded)?;
    distribution_report(cfg, &loaded, &datasets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOutcome {
    pub dataset_files: Vec<PathBuf>,
    pub report: DistributionReport,
}

/// Writes one labeled dataset per horizon and the distribution reports.
pub fn cmd_prepare(cfg: &PipelineConfig) -> Result<PrepareOutcome> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let loaded = load_input(cfg)?;
    let datasets = datasets_for(cfg, &loaded)?;
    layout.create_dirs()?;
    write_file(&layout.root.join("config.json"), &cfg.to_json())?;

    let mut dataset_files = Vec::new();
    for d in &datasets {
        let s = d.horizon.steps_ahead;
        save_dataset(d, layout.dataset(s), layout.dataset_meta(s))?;
        dataset_files.push(layout.dataset(s));
    }
    let report = distribution_report(cfg, &loaded, &datasets)?;
    let reports = layout.reports();
    write_file(&reports.join("distribution.json"), &to_json(&report))?;
    write_file(&reports.join("distribution.txt"), &report.render_text())?;
    write_file(&reports.join("series.json"), &to_json(&report.series))?;
    Ok(PrepareOutcome { dataset_files, report })
}

fn load_prepared(layout: &Layout, h: HorizonSpec) -> Result<LabeledDataset> {
    let (csv, meta) = (layout.dataset(h.steps_ahead), layout.dataset_meta(h.steps_ahead));
    require(&csv)?;
    require(&meta)?;
    let d = load_dataset(csv, meta)?;
    if d.horizon != h {
        return Err(CliError::Config(format!(
            "dataset for S={} was prepared with L={}, config has L={}; rerun prepare",
            h.steps_ahead, d.horizon.lag_count, h.lag_count
        )));
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model_files: Vec<PathBuf>,
    /// One entry per horizon when a grid is configured.
    pub grids: Vec<GridSearchResult>,
}

/// Splits each prepared dataset, optionally runs the grid search on the
/// training part and fits the final model on it.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let mut outcome = TrainOutcome { model_files: Vec::new(), grids: Vec::new() };
    for h in cfg.horizon_specs()? {
        let s = h.steps_ahead;
        let data = load_prepared(&layout, h)?;
        let split = stratified_split(&data.targets, data.num_classes(), cfg.test_fraction, cfg.seed)?;
        let train = data.subset(&split.train);

        let params = match &cfg.grid {
            Some(grid) => {
                let result =
                    grid_search(&train.features, &train.targets, train.num_classes(), grid, &cfg.hyperparams, cfg.seed, cfg.workers)?;
                write_file(&layout.grid_json(s), &to_json(&result))?;
                write_file(&layout.grid_text(s), &result.render_table())?;
                let best = result.best;
                outcome.grids.push(result);
                best
            }
            None => cfg.hyperparams,
        };
        let model = train_dataset(&train, &params, cfg.workers)?;
        write_file(&layout.split(s), &to_json(&split))?;
        model.save(layout.model(s))?;
        outcome.model_files.push(layout.model(s));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub model: String,
    pub report: MultiHorizonReport,
}

/// Deterministic part of the evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: u32,
    pub site_id: String,
    pub thresholds_mw: Vec<f64>,
    pub horizons: Vec<usize>,
    pub predictors: Vec<PredictorReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorTiming {
    pub model: String,
    /// Wall-clock seconds per test example, one entry per horizon.
    pub per_horizon_s: Vec<f64>,
    pub mean_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOutcome {
    pub report: EvaluationReport,
    pub timing: Vec<PredictorTiming>,
    pub text: String,
}

pub const GBRT: &str = "GBRT";
pub const PERSISTENCE: &str = "Persistence";
pub const MAJORITY: &str = "Majority";

struct HorizonResult {
    reports: [MetricsReport; 3],
    seconds_per_example: [f64; 3],
}

fn evaluate_horizon(layout: &Layout, loaded: &LoadedSeries, h: HorizonSpec) -> Result<HorizonResult> {
    let s = h.steps_ahead;
    let data = load_prepared(layout, h)?;
    require(&layout.split(s))?;
    require(&layout.model(s))?;
    let split_text = fs::read_to_string(layout.split(s)).map_err(|e| Error::io(layout.split(s), e))?;
    let split: StratifiedSplit = serde_json::from_str(&split_text)?;
    if split.train.iter().chain(&split.test).any(|&i| i >= data.len()) {
        return Err(CliError::Config(format!("split for S={s} does not match the prepared dataset; rerun train")));
    }
    let model = GbrtModel::load(layout.model(s))?;
    if let Some(mh) = model.horizon() {
        if mh.steps_ahead != s {
            return Err(Error::HorizonMismatch { model: mh.steps_ahead, data: s }.into());
        }
    }

    let thresholds = &data.thresholds;
    let started = Instant::now();
    let persistence = persistence_predict(&loaded.series, h, thresholds)?;
    let persistence_s = started.elapsed().as_secs_f64() / persistence.predicted.len() as f64;
    let by_anchor: HashMap<i64, (RampClass, RampClass)> = persistence
        .anchor_timestamps
        .iter()
        .zip(persistence.truth.iter().zip(&persistence.predicted))
        .map(|(&t, (&y, &p))| (t, (y, p)))
        .collect();

    // Every predictor is scored on the test rows that persistence can also predict.
    let mut test_rows = Vec::with_capacity(split.test.len());
    let mut persistence_pred = Vec::with_capacity(split.test.len());
    for &i in &split.test {
        if let Some(&(truth, pred)) = by_anchor.get(&data.anchor_timestamps[i]) {
            if truth != data.targets[i] {
                return Err(CliError::Config(format!("dataset for S={s} does not match the input series; rerun prepare")));
            }
            test_rows.push(i);
            persistence_pred.push(pred);
        }
    }
    if test_rows.is_empty() {
        return Err(Error::EmptyDataset { needed: 1 }.into());
    }
    let test = data.subset(&test_rows);
    let n = test.len() as f64;

    let started = Instant::now();
    let gbrt_pred = model.predict_class(&test.features)?;
    let gbrt_s = started.elapsed().as_secs_f64() / n;

    let train_targets: Vec<RampClass> = split.train.iter().map(|&i| data.targets[i]).collect();
    let started = Instant::now();
    let majority_pred = majority_predict(&train_targets, test.len())?;
    let majority_s = started.elapsed().as_secs_f64() / n;

    let rare = thresholds.rare_classes();
    let c = data.num_classes();
    let scored = |pred: &[RampClass]| -> Result<MetricsReport> {
        let mut r = score(&test.targets, pred, c, &rare)?;
        r.horizon = Some(h);
        Ok(r)
    };
    Ok(HorizonResult {
        reports: [scored(&gbrt_pred)?, scored(&persistence_pred)?, scored(&majority_pred)?],
        seconds_per_example: [gbrt_s, persistence_s, majority_s],
    })
}

/// Scores GBRT, persistence and the majority class on every horizon's test split.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvaluateOutcome> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    let loaded = load_input(cfg)?;
    let names = [GBRT, PERSISTENCE, MAJORITY];
    let mut per_model: [Vec<MetricsReport>; 3] = Default::default();
    let mut times: [Vec<f64>; 3] = Default::default();
    for h in cfg.horizon_specs()? {
        let r = evaluate_horizon(&layout, &loaded, h)?;
        for (k, report) in r.reports.into_iter().enumerate() {
            per_model[k].push(report);
            times[k].push(r.seconds_per_example[k]);
        }
    }

    let predictors = names
        .iter()
        .zip(per_model)
        .map(|(name, reports)| Ok(PredictorReport { model: name.to_string(), report: aggregate(reports)? }))
        .collect::<Result<Vec<_>>>()?;
    let timing: Vec<PredictorTiming> = names
        .iter()
        .zip(times)
        .map(|(name, t)| PredictorTiming { model: name.to_string(), mean_s: t.iter().sum::<f64>() / t.len() as f64, per_horizon_s: t })
        .collect();
    let report = EvaluationReport {
        version: REPORT_VERSION,
        site_id: cfg.site_id.clone(),
        thresholds_mw: cfg.thresholds()?.thresholds_mw().to_vec(),
        horizons: cfg.horizons.clone(),
        predictors,
    };
    let text = render_evaluation(&report, &timing);

    let reports = layout.reports();
    fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    write_file(&reports.join("evaluation.json"), &to_json(&report))?;
    write_file(&reports.join("timing.json"), &to_json(&timing))?;
    write_file(&reports.join("evaluation.txt"), &text)?;
    Ok(EvaluateOutcome { report, timing, text })
}

pub fn render_evaluation(report: &EvaluationReport, timing: &[PredictorTiming]) -> String {
    let summary: Vec<ModelSummary> =
        report.predictors.iter().zip(timing).map(|(p, t)| ModelSummary::from_report(p.model.clone(), &p.report, Some(t.mean_s))).collect();
    let mut out = format!("Site {:?}, thresholds {:?} MW, horizons {:?}\n\n", report.site_id, report.thresholds_mw, report.horizons);
    out.push_str(&render_summary_table(&summary));
    for p in &report.predictors {
        out.push('\n');
        out.push_str(&render_horizon_table(&p.model, &p.report));
    }
    out
}

/// Reads feature rows from delimited text.
///
/// A first line containing non-numeric fields is a header. When the header
/// has `lag_*` columns only those are used, so prepared dataset files can be
/// fed back in directly.
pub fn read_feature_rows<R: BufRead>(reader: R, delimiter: u8) -> Result<FeatureMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).delimiter(delimiter).trim(csv::Trim::All).flexible(true).from_reader(reader);
    let mut columns: Option<Vec<usize>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(Error::Csv)?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if line == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            let lags: Vec<usize> = record.iter().enumerate().filter(|(_, f)| f.starts_with("lag_")).map(|(i, _)| i).collect();
            columns = Some(if lags.is_empty() { (0..record.len()).collect() } else { lags });
            continue;
        }
        let pick: Box<dyn Iterator<Item = &str>> = match &columns {
            Some(cols) => Box::new(cols.iter().map(|&c| record.get(c).unwrap_or(""))),
            None => Box::new(record.iter()),
        };
        let row = pick
            .map(|f| f.parse::<f64>().map_err(|e| Error::MalformedRow { line: line as u64 + 1, message: format!("bad value {f:?}: {e}") }))
            .collect::<std::result::Result<Vec<f64>, Error>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset { needed: 1 }.into());
    }
    let width = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::WidthMismatch { expected: width, actual: r.len() }.into());
    }
    Ok(FeatureMatrix::new(rows.len(), width, rows.concat())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: RampClass,
    pub probabilities: Vec<f64>,
}

/// Class and probability vector for each row, in input order.
pub fn predict_rows(model: &GbrtModel, rows: &FeatureMatrix) -> Result<Vec<Prediction>> {
    if rows.n_cols() != model.num_features() {
        return Err(Error::WidthMismatch { expected: model.num_features(), actual: rows.n_cols() }.into());
    }
    let proba = model.predict_proba(rows)?;
    Ok(proba.rows().map(|p| Prediction { class: rampcast::gbrt::argmax_class(p), probabilities: p.to_vec() }).collect())
}

/// Writes one JSON object per prediction, one per line.
pub fn cmd_predict<W: Write>(model_path: &Path, rows: &FeatureMatrix, mut out: W) -> Result<usize> {
    require(model_path)?;
    let model = GbrtModel::load(model_path)?;
    let predictions = predict_rows(&model, rows)?;
    for p in &predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n").map_err(|e| Error::io("<stdout>", e))?;
    }
    out.flush().map_err(|e| Error::io("<stdout>", e))?;
    Ok(predictions.len())
}

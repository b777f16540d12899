//! Pipeline configuration file and the command-line overrides applied on top of it.

use std::path::{Path, PathBuf};

use rampcast::evaluation::ParamGrid;
use rampcast::gbrt::HyperParams;
use rampcast::ingest::{GapPolicy, LoadOptions, Schema};
use rampcast::labeling::{HorizonSpec, ThresholdSet};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Input file location and column mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub timestamp_column: String,
    pub power_column: String,
    /// A single ASCII character.
    pub delimiter: String,
    pub gap_policy: GapPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        let schema = Schema::default();
        DataConfig {
            path: None,
            timestamp_column: schema.timestamp_column,
            power_column: schema.power_column,
            delimiter: (schema.delimiter as char).to_string(),
            gap_policy: GapPolicy::Split,
        }
    }
}

/// Ramp threshold, either relative to rated capacity or in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Threshold {
    Fraction(f64),
    Mw(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub data: DataConfig,
    pub site_id: String,
    pub resolution_s: i64,
    pub rated_capacity_mw: Option<f64>,
    pub threshold: Threshold,
    pub horizons: Vec<usize>,
    pub lag_count: usize,
    pub hyperparams: HyperParams,
    /// When present, `n_estimators` and `max_depth` are chosen by cross-validation.
    pub grid: Option<ParamGrid>,
    pub test_fraction: f64,
    pub seed: u64,
    /// 0 means one worker per available core.
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            data: DataConfig::default(),
            site_id: String::new(),
            resolution_s: 600,
            rated_capacity_mw: None,
            threshold: Threshold::Fraction(0.5),
            horizons: (1..=6).collect(),
            lag_count: 36,
            hyperparams: HyperParams::default(),
            grid: None,
            test_fraction: 0.2,
            seed: 42,
            workers: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub timestamp_column: Option<String>,
    pub power_column: Option<String>,
    pub capacity_mw: Option<f64>,
    pub threshold_fraction: Option<f64>,
    pub threshold_mw: Option<f64>,
    pub horizons: Option<Vec<usize>>,
    pub lags: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub grid: Option<GridChoice>,
    pub out: Option<PathBuf>,
}

/// `--grid` value: `none`, `standard`, or `ROUNDS/DEPTHS/FOLDS` with comma-separated lists.
#[derive(Debug, Clone, PartialEq)]
pub enum GridChoice {
    Off,
    Grid(ParamGrid),
}

impl std::str::FromStr for GridChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" | "off" => return Ok(GridChoice::Off),
            "standard" => return Ok(GridChoice::Grid(ParamGrid::standard())),
            _ => {}
        }
        let parts: Vec<&str> = s.split('/').collect();
        let [rounds, depths, folds] = parts[..] else {
            return Err(format!("expected none, standard or ROUNDS/DEPTHS/FOLDS, got {s:?}"));
        };
        Ok(GridChoice::Grid(ParamGrid {
            n_estimators_choices: parse_list(rounds)?,
            max_depth_choices: parse_list(depths)?,
            folds: folds.trim().parse().map_err(|e| format!("bad fold count {folds:?}: {e}"))?,
        }))
    }
}

/// Parses `1,2,3` and inclusive ranges such as `1-6`.
pub fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad integer {t:?}: {e}"));
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {item:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(item)?),
        }
    }
    Ok(out)
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        match probe.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == CONFIG_VERSION as u64 => {}
            Some(v) => return Err(CliError::Config(format!("config version {v} is not supported (expected {CONFIG_VERSION})"))),
            None => return Err(CliError::Config("config needs an integer `version` field".into())),
        }
        serde_json::from_value(probe).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if o.threshold_fraction.is_some() && o.threshold_mw.is_some() {
            return Err(CliError::Config("--threshold-fraction and --threshold-mw are mutually exclusive".into()));
        }
        if let Some(p) = &o.data {
            self.data.path = Some(p.clone());
        }
        if let Some(c) = &o.timestamp_column {
            self.data.timestamp_column = c.clone();
        }
        if let Some(c) = &o.power_column {
            self.data.power_column = c.clone();
        }
        if let Some(c) = o.capacity_mw {
            self.rated_capacity_mw = Some(c);
        }
        if let Some(f) = o.threshold_fraction {
            self.threshold = Threshold::Fraction(f);
        }
        if let Some(t) = o.threshold_mw {
            self.threshold = Threshold::Mw(t);
        }
        if let Some(h) = &o.horizons {
            self.horizons = h.clone();
        }
        if let Some(l) = o.lags {
            self.lag_count = l;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        match &o.grid {
            Some(GridChoice::Off) => self.grid = None,
            Some(GridChoice::Grid(g)) => self.grid = Some(g.clone()),
            None => {}
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        Ok(())
    }

    /// Checks everything that does not require reading the input file.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.horizons.is_empty() {
            return fail("horizons must be non-empty".into());
        }
        let mut sorted = self.horizons.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.horizons.len() {
            return fail(format!("horizons must be distinct, got {:?}", self.horizons));
        }
        for &s in &self.horizons {
            HorizonSpec::new(s, self.lag_count)?;
        }
        if self.resolution_s <= 0 {
            return fail(format!("resolution_s must be positive, got {}", self.resolution_s));
        }
        if self.delimiter().is_err() {
            return fail(format!("delimiter must be one ASCII character, got {:?}", self.data.delimiter));
        }
        if let Threshold::Fraction(f) = self.threshold {
            if !(f > 0.0 && f <= 1.0) {
                return fail(format!("threshold fraction must be in (0, 1], got {f}"));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        self.hyperparams.validate()?;
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }

    fn delimiter(&self) -> std::result::Result<u8, ()> {
        match self.data.delimiter.as_bytes() {
            [b] if b.is_ascii() => Ok(*b),
            _ => Err(()),
        }
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data.path.as_deref().ok_or_else(|| CliError::Config("no input file; set data.path or pass --data".into()))
    }

    pub fn capacity(&self) -> Result<f64> {
        match self.rated_capacity_mw {
            Some(c) if c.is_finite() && c > 0.0 => Ok(c),
            Some(c) => Err(CliError::Config(format!("rated capacity must be positive, got {c}"))),
            None => Err(CliError::Config("rated capacity is required; set rated_capacity_mw or pass --capacity-mw".into())),
        }
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        Ok(LoadOptions {
            schema: Schema {
                timestamp_column: self.data.timestamp_column.clone(),
                power_column: self.data.power_column.clone(),
                delimiter: self.delimiter().map_err(|_| CliError::Config("bad delimiter".into()))?,
            },
            resolution_s: self.resolution_s,
            rated_capacity_mw: self.capacity()?,
            gap_policy: self.data.gap_policy,
            site_id: self.site_id.clone(),
        })
    }

    pub fn thresholds(&self) -> Result<ThresholdSet> {
        Ok(match self.threshold {
            Threshold::Fraction(f) => ThresholdSet::from_capacity_fraction(self.capacity()?, f)?,
            Threshold::Mw(t) => ThresholdSet::single(t)?,
        })
    }

    pub fn horizon_specs(&self) -> Result<Vec<HorizonSpec>> {
        self.horizons.iter().map(|&s| Ok(HorizonSpec::new(s, self.lag_count)?)).collect()
    }
}

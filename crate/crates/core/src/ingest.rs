//! Loading and validation of wind-power time series.
//!
//! Input is headered delimited text with a timestamp column (epoch seconds or
//! ISO-8601) and a power column in megawatts. Missing steps are never
//! interpolated: with [`GapPolicy::Split`] the series is broken into contiguous
//! segments and downstream differencing/windowing stays inside a segment.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub power_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Break the series at every missing step.
    #[default]
    Split,
    /// Treat any missing step as a data error.
    Reject,
}

/// Column mapping for delimited input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub timestamp_column: String,
    pub power_column: String,
    pub delimiter: u8,
}

impl Default for Schema {
    fn default() -> Self {
        Schema { timestamp_column: "timestamp".to_string(), power_column: "power_mw".to_string(), delimiter: b',' }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub schema: Schema,
    pub resolution_s: i64,
    pub rated_capacity_mw: f64,
    pub gap_policy: GapPolicy,
    pub site_id: String,
}

impl LoadOptions {
    pub fn new(resolution_s: i64, rated_capacity_mw: f64) -> Self {
        LoadOptions { schema: Schema::default(), resolution_s, rated_capacity_mw, gap_policy: GapPolicy::Split, site_id: String::new() }
    }
}

/// Bookkeeping produced while loading a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    /// Rows with an empty or NaN power cell.
    pub rows_dropped: usize,
    /// Number of breaks between contiguous segments.
    pub gap_count: usize,
    /// Total number of sampling steps absent from the input.
    pub missing_steps: usize,
    pub segment_lengths: Vec<usize>,
}

/// A uniformly sampled series, possibly made of several contiguous segments.
///
/// Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct WindPowerSeries {
    points: Vec<SeriesPoint>,
    segments: Vec<Range<usize>>,
    resolution_s: i64,
    rated_capacity_mw: f64,
    site_id: String,
}

impl WindPowerSeries {
    /// Builds a series from points sorted by timestamp.
    ///
    /// Timestamps must be strictly increasing and lie on the grid
    /// `t0 + k * resolution_s`. Power values must be finite and within
    /// `[0, rated_capacity_mw]`.
    pub fn new(
        points: Vec<SeriesPoint>,
        resolution_s: i64,
        rated_capacity_mw: f64,
        site_id: impl Into<String>,
        gap_policy: GapPolicy,
    ) -> Result<Self> {
        if resolution_s <= 0 {
            return Err(Error::InvalidParams(format!("resolution must be positive, got {resolution_s}")));
        }
        if !(rated_capacity_mw.is_finite() && rated_capacity_mw > 0.0) {
            return Err(Error::InvalidParams(format!("rated capacity must be positive, got {rated_capacity_mw}")));
        }

        let bad: Vec<(u64, f64)> = points
            .iter()
            .enumerate()
            .filter(|(_, p)| !(p.power_mw >= 0.0 && p.power_mw <= rated_capacity_mw))
            .map(|(i, p)| (i as u64 + 1, p.power_mw))
            .collect();
        if !bad.is_empty() {
            return Err(Error::PowerOutOfRange { capacity_mw: rated_capacity_mw, rows: bad });
        }

        let mut segments = Vec::new();
        let mut start = 0;
        for i in 1..points.len() {
            let (prev, cur) = (points[i - 1].timestamp, points[i].timestamp);
            let step = cur - prev;
            if step <= 0 {
                return Err(Error::DuplicateTimestamps(vec![cur]));
            }
            if step % resolution_s != 0 {
                return Err(Error::MisalignedTimestamp { timestamp: cur, resolution_s });
            }
            if step != resolution_s {
                if gap_policy == GapPolicy::Reject {
                    return Err(Error::MalformedRow { line: i as u64 + 1, message: format!("missing samples between {prev} and {cur}") });
                }
                segments.push(start..i);
                start = i;
            }
        }
        if let Some(first) = points.first() {
            if first.timestamp < 0 {
                return Err(Error::MalformedRow { line: 1, message: format!("negative timestamp {}", first.timestamp) });
            }
            segments.push(start..points.len());
        }

        Ok(WindPowerSeries { points, segments, resolution_s, rated_capacity_mw, site_id: site_id.into() })
    }

    pub fn points(&self) -> &[SeriesPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn resolution_s(&self) -> i64 {
        self.resolution_s
    }

    pub fn rated_capacity_mw(&self) -> f64 {
        self.rated_capacity_mw
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    /// Contiguous runs of points with constant stride.
    pub fn segments(&self) -> impl Iterator<Item = &[SeriesPoint]> + '_ {
        self.segments.iter().map(move |r| &self.points[r.clone()])
    }

    pub fn segment_lengths(&self) -> Vec<usize> {
        self.segments.iter().map(|r| r.len()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries {
    pub series: WindPowerSeries,
    pub report: LoadReport,
}

pub fn load_series(path: impl AsRef<Path>, options: &LoadOptions) -> Result<LoadedSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_series(BufReader::new(file), options)
}

/// Parses delimited text into a validated series.
pub fn read_series<R: Read>(reader: R, options: &LoadOptions) -> Result<LoadedSeries> {
    let schema = &options.schema;
    let mut rdr = csv::ReaderBuilder::new().delimiter(schema.delimiter).trim(csv::Trim::All).from_reader(reader);

    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedRow { line: 1, message: format!("missing column `{name}` in header") })
    };
    let ts_col = column(&schema.timestamp_column)?;
    let power_col = column(&schema.power_column)?;

    let mut rows: Vec<(u64, SeriesPoint)> = Vec::new();
    let mut rows_read = 0;
    let mut rows_dropped = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        rows_read += 1;
        let field = |idx: usize| {
            record.get(idx).ok_or_else(|| Error::MalformedRow {
                line,
                message: format!("expected at least {} fields, found {}", idx + 1, record.len()),
            })
        };
        let timestamp = parse_timestamp(field(ts_col)?).map_err(|message| Error::MalformedRow { line, message })?;
        let raw_power = field(power_col)?;
        if raw_power.is_empty() || raw_power.eq_ignore_ascii_case("nan") {
            rows_dropped += 1;
            continue;
        }
        let power_mw: f64 =
            raw_power.parse().map_err(|_| Error::MalformedRow { line, message: format!("cannot parse power value `{raw_power}`") })?;
        if !power_mw.is_finite() {
            return Err(Error::MalformedRow { line, message: format!("non-finite power value `{raw_power}`") });
        }
        rows.push((line, SeriesPoint { timestamp, power_mw }));
    }

    let bad: Vec<(u64, f64)> = rows
        .iter()
        .filter(|(_, p)| !(p.power_mw >= 0.0 && p.power_mw <= options.rated_capacity_mw))
        .map(|(line, p)| (*line, p.power_mw))
        .collect();
    if !bad.is_empty() {
        return Err(Error::PowerOutOfRange { capacity_mw: options.rated_capacity_mw, rows: bad });
    }

    rows.sort_by_key(|(_, p)| p.timestamp);
    let mut duplicates: Vec<i64> = rows.windows(2).filter(|w| w[0].1.timestamp == w[1].1.timestamp).map(|w| w[0].1.timestamp).collect();
    duplicates.dedup();
    if !duplicates.is_empty() {
        return Err(Error::DuplicateTimestamps(duplicates));
    }
    if let Some((line, p)) = rows.iter().find(|(_, p)| p.timestamp < 0) {
        return Err(Error::MalformedRow { line: *line, message: format!("negative timestamp {}", p.timestamp) });
    }

    let points: Vec<SeriesPoint> = rows.into_iter().map(|(_, p)| p).collect();
    if points.is_empty() {
        return Err(Error::EmptySeries);
    }
    let series =
        WindPowerSeries::new(points, options.resolution_s, options.rated_capacity_mw, options.site_id.clone(), options.gap_policy)?;

    let segment_lengths = series.segment_lengths();
    let missing_steps = series
        .segments
        .windows(2)
        .map(|w| {
            let gap = series.points[w[1].start].timestamp - series.points[w[0].end - 1].timestamp;
            (gap / options.resolution_s - 1) as usize
        })
        .sum();
    let report = LoadReport { rows_read, rows_dropped, gap_count: segment_lengths.len().saturating_sub(1), missing_steps, segment_lengths };
    Ok(LoadedSeries { series, report })
}

/// Accepts integer epoch seconds, RFC 3339, or a naive `YYYY-MM-DD[ T]HH:MM[:SS]` taken as UTC.
pub fn parse_timestamp(raw: &str) -> std::result::Result<i64, String> {
    if let Ok(secs) = raw.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp());
    }
    const NAIVE: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    NAIVE
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
        .ok_or_else(|| format!("cannot parse timestamp `{raw}`"))
}

/// Writes the series in the same delimited layout [`read_series`] accepts.
///
/// Values use the shortest representation that parses back to the same bits.
pub fn write_series<W: Write>(series: &WindPowerSeries, schema: &Schema, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(schema.delimiter).from_writer(writer);
    wtr.write_record([schema.timestamp_column.as_str(), schema.power_column.as_str()])?;
    for p in series.points() {
        wtr.write_record([p.timestamp.to_string(), p.power_mw.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn save_series(series: &WindPowerSeries, schema: &Schema, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_series(series, schema, io::BufWriter::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub count: usize,
    pub min_mw: f64,
    pub max_mw: f64,
    pub mean_mw: f64,
    /// Mean power as a fraction of rated capacity.
    pub capacity_fraction: f64,
}

pub fn series_stats(series: &WindPowerSeries) -> Result<SeriesStats> {
    let powers = series.points().iter().map(|p| p.power_mw);
    let count = series.len();
    if count == 0 {
        return Err(Error::EmptySeries);
    }
    let (min, max, sum) = powers.fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), v| (lo.min(v), hi.max(v), s + v));
    // clamp guards against the sum rounding the mean just outside [min, max]
    let mean = (sum / count as f64).clamp(min, max);
    Ok(SeriesStats { count, min_mw: min, max_mw: max, mean_mw: mean, capacity_fraction: mean / series.rated_capacity_mw() })
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used by the command line front-end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Training,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("duplicate timestamps: {0:?}")]
    DuplicateTimestamps(Vec<i64>),

    #[error("power outside [0, {capacity_mw}] MW at {} row(s): {}", rows.len(), format_rows(rows))]
    PowerOutOfRange {
        capacity_mw: f64,
        /// (line number, value) pairs.
        rows: Vec<(u64, f64)>,
    },

    #[error("timestamp {timestamp} is not aligned to the {resolution_s}s sampling grid")]
    MisalignedTimestamp { timestamp: i64, resolution_s: i64 },

    #[error("series is empty")]
    EmptySeries,

    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no segment is long enough: need {needed} contiguous points")]
    EmptyDataset { needed: usize },

    #[error("invalid class id {id} (expected 1..={num_classes})")]
    UnknownClass { id: usize, num_classes: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("feature width mismatch: model expects {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("cannot build {folds} folds: {reason}")]
    InfeasibleFolds { folds: usize, reason: String },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("horizon mismatch: model trained for S={model}, test set built for S={data}")]
    HorizonMismatch { model: usize, data: usize },

    #[error("unsupported model version {found} (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("malformed model document: {0}")]
    MalformedModel(String),

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn format_rows(rows: &[(u64, f64)]) -> String {
    const SHOWN: usize = 10;
    let mut out = rows.iter().take(SHOWN).map(|(line, v)| format!("line {line} ({v})")).collect::<Vec<_>>().join(", ");
    if rows.len() > SHOWN {
        out.push_str(&format!(", ... {} more", rows.len() - SHOWN));
    }
    out
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidThresholds(_)
            | Error::InvalidHorizon(_)
            | Error::InvalidParams(_)
            | Error::InfeasibleFolds { .. }
            | Error::InvalidSplit(_) => ErrorKind::Config,
            Error::SingleClass | Error::HorizonMismatch { .. } => ErrorKind::Training,
            _ => ErrorKind::Data,
        }
    }
}

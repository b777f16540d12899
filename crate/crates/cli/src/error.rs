use rampcast::ErrorKind;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {0}; run the earlier pipeline stage first")]
    MissingArtifact(String),

    #[error(transparent)]
    Core(#[from] rampcast::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Config(_) => ErrorKind::Config,
            CliError::MissingArtifact(_) => ErrorKind::Data,
            CliError::Core(e) => e.kind(),
        }
    }

    /// 2 for configuration, 3 for data and 4 for training errors.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Training => 4,
        }
    }

    /// Single-line JSON description for stderr.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: Body<'a>,
        }
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            code: i32,
            message: String,
        }
        let kind = match self.kind() {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Training => "training",
        };
        let line = Line { error: Body { kind, code: self.exit_code(), message: self.to_string() } };
        serde_json::to_string(&line).expect("error line serializes")
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(rampcast::Error::Json(e))
    }
}

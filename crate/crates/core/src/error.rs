use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },

    #[error("missing mandatory element `{element}`")]
    Schema { element: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("no identifier mapping for cusip {cusip} on {date}")]
    UnmappedIdentifier { cusip: String, date: NaiveDate },

    #[error("missing market data for {ticker} on {}", join_dates(.dates))]
    DataGap { ticker: String, dates: Vec<NaiveDate> },

    #[error("insufficient history for {ticker} at {date}: {have} usable of {need} required")]
    InsufficientHistory {
        ticker: String,
        date: NaiveDate,
        have: usize,
        need: usize,
    },

    #[error("singular design matrix")]
    SingularDesign,

    #[error("date {date} shifted by {offset} falls outside the trading calendar")]
    OutOfRange { date: NaiveDate, offset: i64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("threshold search needs at least one positive and one negative label")]
    Threshold,

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("tuning failed: {0}")]
    Tuning(String),

    #[error("shape mismatch: expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("statistical test undefined: {0}")]
    Test(String),

    #[error("{path}, row {row}: {message}")]
    Format { path: String, row: usize, message: String },

    #[error("event {key}: {source}")]
    Event {
        key: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("http: {0}")]
    Http(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("internal: {0}")]
    Internal(String),
}

fn join_dates(dates: &[NaiveDate]) -> String {
    dates.iter().map(NaiveDate::to_string).collect::<Vec<_>>().join(", ")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn for_event(self, key: impl ToString) -> Self {
        Error::Event {
            key: key.to_string(),
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with event/stage context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Event { source, .. } | Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for missing or too-short market data, the class lenient mode skips.
    pub fn is_data_gap(&self) -> bool {
        matches!(
            self.root(),
            Error::DataGap { .. } | Error::InsufficientHistory { .. } | Error::OutOfRange { .. }
        )
    }

    /// Short machine-readable reason code used in skip and reject records.
    pub fn reason_code(&self) -> &'static str {
        match self.root() {
            Error::Xml { .. } => "malformed_xml",
            Error::Schema { .. } => "schema",
            Error::Validation(_) => "validation",
            Error::UnmappedIdentifier { .. } => "unmapped_identifier",
            Error::DataGap { .. } => "no_market_data",
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::SingularDesign => "singular_design",
            Error::OutOfRange { .. } => "out_of_calendar",
            Error::Config(_) => "config",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::Threshold => "threshold",
            Error::Metric(_) => "metric",
            Error::Tuning(_) => "tuning",
            Error::Shape { .. } => "shape",
            Error::Test(_) => "test",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Http(_) => "http",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Internal(_) => "internal",
            Error::Event { .. } | Error::Stage { .. } => unreachable!("root() strips context"),
        }
    }
}

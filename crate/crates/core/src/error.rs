use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("DRG `{drg}` is listed under two MDCs (`{first}` and `{second}`)")]
    DuplicateParent {
        drg: String,
        first: String,
        second: String,
    },
    #[error("unknown DRG `{0}`")]
    UnknownDrg(String),
    #[error("dataset is empty")]
    EmptyData,
    #[error("label vector has length {labels}, expected {rows}")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("linear predictor cache is stale")]
    StaleCache,
    #[error("response is degenerate (all observations in one class)")]
    DegenerateResponse,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("labels contain no positives")]
    NoPositives,
    #[error("every group was skipped (single-class)")]
    AllGroupsSkipped,
    #[error("cannot build {folds} folds: class {class} has only {count} members")]
    InfeasibleFolds {
        folds: usize,
        class: u8,
        count: usize,
    },
    #[error("intercept calibration failed for DRG `{0}`")]
    CalibrationFailed(String),
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("outcome value `{0}` is not binary")]
    NonBinaryOutcome(String),
    #[error("missing covariate `{0}`")]
    MissingCovariate(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by bad user input rather than numerical or I/O failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::StaleCache | Error::CalibrationFailed(_))
    }
}

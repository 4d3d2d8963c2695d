use thiserror::Error;

/// Errors produced by the risk library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("insufficient history: need {needed} observations, have {available}")]
    Window { needed: usize, available: usize },

    #[error("option lifecycle error: {0}")]
    Lifecycle(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("operator `{0}` has no additive split")]
    UnsupportedSplit(&'static str),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("no intersection between CDF and lambda function in [{lo}, {hi}]")]
    NoIntersection { lo: f64, hi: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("conditioning point {y0} lies outside the sample support")]
    UnsupportedConditioningPoint { y0: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in report flag columns.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::MissingData(_) => "missing_data",
            Error::Window { .. } => "window",
            Error::Lifecycle(_) => "lifecycle",
            Error::Dimension { .. } => "dimension",
            Error::UnsupportedSplit(_) => "unsupported_split",
            Error::Calibration(_) => "calibration",
            Error::NoIntersection { .. } => "no_intersection",
            Error::Numeric(_) => "numeric",
            Error::AssumptionViolation(_) => "assumption_violation",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::UnsupportedConditioningPoint { .. } => "non_estimable",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    /// True for errors caused by input files rather than configuration or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::MissingData(_)
                | Error::Window { .. }
                | Error::Lifecycle(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

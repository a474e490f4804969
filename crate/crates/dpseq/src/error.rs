use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped roughly by the exit-code contract of the CLI:
/// usage/validation errors, data errors, and numerical errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution spec: {0}")]
    InvalidSpec(String),

    #[error("unsupported family pairing: pre is {pre}, post is {post}")]
    UnsupportedFamilyPair { pre: &'static str, post: &'static str },

    #[error("stream {stream}: observation dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch {
        stream: usize,
        expected: usize,
        got: usize,
    },

    #[error("truncation not configured")]
    TruncationNotConfigured,

    #[error("streams {0:?} have unbounded sensitivity and no truncation level")]
    UnboundedStreams(Vec<usize>),

    #[error("truncation validity failed: tilde_I0 = {tilde_i0}, tilde_I1 = {tilde_i1} (need both > 0; try a larger trunc_level or better segments)")]
    TruncationInvalid { tilde_i0: f64, tilde_i1: f64 },

    #[error("quadrature did not converge: achieved tolerance {achieved:e} (requested {requested:e})")]
    QuadratureFailed { achieved: f64, requested: f64 },

    #[error("invalid detector config: {0}")]
    InvalidConfig(String),

    #[error("detector already stopped at t = {0}")]
    DetectorStopped(u64),

    #[error("observation source exhausted at t = {at} before horizon {horizon}")]
    SourceExhausted { at: u64, horizon: u64 },

    #[error("unsupported scenario: {0}")]
    UnsupportedScenario(String),

    #[error("calibration bracket failure: {0}")]
    CalibrationFailed(String),

    #[error("jacobi eigendecomposition did not converge in {sweeps} sweeps (off-diagonal norm {off:e})")]
    JacobiNonConvergence { sweeps: usize, off: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("csv parse error at row {row}, column {col}: {msg}")]
    CsvCell { row: usize, col: usize, msg: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable CLI exit code: 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::InvalidConfig(_) | Error::UnsupportedScenario(_) => 2,
            Error::Data(_)
            | Error::CsvCell { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::SourceExhausted { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the pipeline exit code
/// they map to: validation (2), numerical (3), I/O (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix asymmetry {asymmetry:.3e} exceeds tolerance {tolerance:.3e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("non-finite entry in {context}")]
    NonFinite { context: &'static str },

    #[error("{what} did not converge: residual {residual:.3e}")]
    NoConvergence { what: &'static str, residual: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:.3e}")]
    NotPsd { eigenvalue: f64 },

    #[error("factorization failed with jitter escalated to {jitter:.3e}")]
    IllConditioned { jitter: f64 },

    #[error("eigenvalue cluster {index} is not separated by the gap threshold {gap:.3e}")]
    Degenerate { index: usize, gap: f64 },

    #[error("{what}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("invalid argument: {context}")]
    InvalidArgument { context: String },

    #[error("operator is not coercive at parameter {parameter:?}")]
    NotCoercive { parameter: Vec<f64> },

    #[error("ill-posed problem: {detail}")]
    IllPosed { detail: String },

    #[error("feature count {features} exceeds cap {cap}")]
    FeatureCap { features: usize, cap: usize },

    #[error("posterior evidence {evidence:.3e} below underflow threshold")]
    EvidenceUnderflow { evidence: f64 },

    #[error("config validation failed at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("missing artifact: {path}")]
    MissingArtifact { path: String },

    #[error("snapshot {index}: {source}")]
    Snapshot {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotSquare { .. }
            | Error::NotSymmetric { .. }
            | Error::NonFinite { .. }
            | Error::IndexOutOfRange { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidArgument { .. }
            | Error::FeatureCap { .. }
            | Error::Validation { .. } => 2,
            Error::NoConvergence { .. }
            | Error::NotPsd { .. }
            | Error::IllConditioned { .. }
            | Error::Degenerate { .. }
            | Error::NotCoercive { .. }
            | Error::IllPosed { .. }
            | Error::EvidenceUnderflow { .. } => 3,
            Error::Io { .. }
            | Error::Json { .. }
            | Error::Parse { .. }
            | Error::MissingArtifact { .. } => 4,
            Error::Snapshot { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn dim(context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
        }
    }

    pub(crate) fn invalid(context: impl Into<String>) -> Self {
        Error::InvalidArgument {
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

/// Errors raised by the numerical pipeline and the experiment front end.
///
/// Every variant maps onto one of the process exit codes used by the CLI
/// (see [`MflqError::exit_code`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MflqError {
    #[error("malformed input: {0}")]
    Parse(String),

    #[error("shape error at {path}: {message}")]
    Shape { path: String, message: String },

    #[error("asymmetric input: {0}")]
    Asymmetric(String),

    #[error("A1 violated: {0}")]
    AssumptionA1(String),

    #[error("Riccati inversion breakdown at t = {t}")]
    RiccatiBreakdown { t: f64 },

    #[error("ARE divergence (check A2)")]
    AreDivergence,

    #[error("ARE solution not positive definite")]
    AreNotPositive,

    #[error("ARE gain is not a stabilizer (check A2): {0}")]
    NotStabilizing(String),

    #[error("static problem degenerate (check A1/A2)")]
    StaticDegenerate,

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("ensemble mismatch: {0}")]
    EnsembleMismatch(String),

    #[error("non-finite state in path {path} at step {step}")]
    NonFinite { path: usize, step: usize },

    #[error("window too sparse: {0}")]
    WindowTooSparse(String),

    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("acceptance check failed: {0}")]
    Acceptance(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl MflqError {
    /// Exit code contract: 2 parse, 3 shape, 4 assumptions, 5 acceptance, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            MflqError::Parse(_) => 2,
            MflqError::Shape { .. } | MflqError::Asymmetric(_) | MflqError::Config(_) => 3,
            MflqError::AssumptionA1(_) => 4,
            MflqError::RiccatiBreakdown { .. }
            | MflqError::AreDivergence
            | MflqError::AreNotPositive
            | MflqError::NotStabilizing(_)
            | MflqError::StaticDegenerate
            | MflqError::NonFinite { .. }
            | MflqError::Acceptance(_) => 5,
            MflqError::MeshMismatch(_)
            | MflqError::EnsembleMismatch(_)
            | MflqError::WindowTooSparse(_)
            | MflqError::NotPositiveDefinite(_)
            | MflqError::Io(_) => 1,
        }
    }

    pub(crate) fn shape(path: impl Into<String>, message: impl Into<String>) -> Self {
        MflqError::Shape {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for MflqError {
    fn from(e: std::io::Error) -> Self {
        MflqError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MflqError>;

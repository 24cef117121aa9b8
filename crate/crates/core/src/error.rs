use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid law: {0}")]
    InvalidLaw(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("solver did not converge after {iterations} iterations (best residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("internal consistency failure: {0}")]
    Consistency(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for solver, floating-point and covariance failures.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self.root(),
            Error::SolverFailure { .. } | Error::NumericFailure(_) | Error::Consistency(_) | Error::InvalidCovariance(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

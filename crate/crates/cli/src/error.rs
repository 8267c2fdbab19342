use std::path::PathBuf;

use thiserror::Error;

/// Command failure; each variant maps to a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Schema(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<ctxsched::StreamError> for CliError {
    fn from(e: ctxsched::StreamError) -> Self {
        use ctxsched::StreamError as E;
        match e {
            E::Config(m) => CliError::Usage(m),
            E::Io(source) => CliError::Io { path: PathBuf::from("<stream>"), source },
            other => CliError::Schema(other.to_string()),
        }
    }
}

impl From<ctxsched::CatalogError> for CliError {
    fn from(e: ctxsched::CatalogError) -> Self {
        use ctxsched::CatalogError as E;
        match e {
            E::InvalidParameter(m) => CliError::Usage(m),
            E::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            E::Invalid(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<ctxsched::DetectError> for CliError {
    fn from(e: ctxsched::DetectError) -> Self {
        use ctxsched::DetectError as E;
        match &e {
            E::InvalidConfig(_) => CliError::Usage(e.to_string()),
            E::StreamMismatch(_) | E::UnknownContext(_) => CliError::Schema(e.to_string()),
            E::Uncoverable { .. } => CliError::Infeasible(e.to_string()),
            E::AtFrame { source, .. } => match **source {
                E::Uncoverable { .. } => CliError::Infeasible(e.to_string()),
                E::UnknownContext(_) => CliError::Schema(e.to_string()),
                _ => CliError::Internal(e.to_string()),
            },
        }
    }
}

impl From<ctxsched::oracle::OracleError> for CliError {
    fn from(e: ctxsched::oracle::OracleError) -> Self {
        use ctxsched::oracle::OracleError as E;
        match &e {
            E::InvalidConfig(_) | E::CapExceeded { .. } | E::TooManyLabels(_) => CliError::Usage(e.to_string()),
            E::Uncoverable { .. } | E::Infeasible { .. } | E::AtFrame { .. } => CliError::Infeasible(e.to_string()),
        }
    }
}

impl From<ctxsched::accuracy::AccuracyError> for CliError {
    fn from(e: ctxsched::accuracy::AccuracyError) -> Self {
        CliError::Schema(e.to_string())
    }
}

impl From<ctxsched::cost::CostError> for CliError {
    fn from(e: ctxsched::cost::CostError) -> Self {
        use ctxsched::cost::CostError as E;
        match e {
            E::Parse(_) => CliError::Schema(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ctxsched::metrics::MetricsError> for CliError {
    fn from(e: ctxsched::metrics::MetricsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

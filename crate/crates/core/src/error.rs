use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("degenerate feature vector: norm {norm:e} below threshold")]
    DegenerateFeature { norm: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("forward cache does not match the network it is used with")]
    StaleCache,

    #[error("need at least {needed} points, got {available}")]
    InsufficientPoints { needed: usize, available: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("normalized return undefined: optimal and random values coincide")]
    DegenerateDenominator,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config key `{key}`: {message}")]
    ConfigKey { key: String, message: String },

    #[error("training aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::DegenerateFeature { .. } => "degenerate_feature",
            Error::NonFinite(_) => "non_finite",
            Error::StaleCache => "stale_cache",
            Error::InsufficientPoints { .. } => "insufficient_points",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::DegenerateDenominator => "degenerate_denominator",
            Error::Parse { .. } => "parse",
            Error::ConfigKey { .. } => "config_key",
            Error::Aborted(_) => "aborted",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}

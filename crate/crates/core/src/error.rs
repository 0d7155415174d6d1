use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate configuration (condition estimate {condition:.3e})")]
    Degenerate { condition: f64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("coverage gap: {missing} pixels uncovered, first at (row {}, col {})", first.0, first.1)]
    CoverageGap { missing: usize, first: (usize, usize) },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input at byte offset {offset}")]
    Truncated { offset: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidShape { .. } => "invalid_shape",
            Error::Domain { .. } => "domain",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Degenerate { .. } => "degenerate",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::CoverageGap { .. } => "coverage_gap",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::Io(_) => "io",
            Error::TomlDe(_) | Error::TomlSer(_) => "config",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            detail: detail.into(),
        }
    }
}

use thiserror::Error;

pub type Result<T, E = UavmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum UavmError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite numeric input in {0}")]
    NumericInput(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("shape error in sample `{sample_id}`: expected {what} {expected}, found {found}")]
    FeatureShape {
        sample_id: String,
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("autodiff error: {0}")]
    Autodiff(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl UavmError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Unsupported(_) | Self::Json(_) | Self::Contract(_) => 1,
            Self::NumericFailure(_) | Self::Autodiff(_) => 3,
            Self::Dimension { .. }
            | Self::NumericInput(_)
            | Self::Data(_)
            | Self::Parse { .. }
            | Self::FeatureShape { .. }
            | Self::EmptyInput(_)
            | Self::Io { .. } => 2,
        }
    }
}

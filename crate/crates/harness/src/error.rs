use crate::config::SchemaError;

/// Everything a command can fail with, mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Schema(#[from] SchemaError),

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Core(#[from] deep_promp::Error),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// 2 configuration or argument, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use deep_promp::Error as E;
        match self {
            HarnessError::Schema(_) | HarnessError::Usage(_) => 2,
            HarnessError::Core(E::Numeric { .. }) => 3,
            HarnessError::Core(E::Io(_) | E::Parse { .. } | E::Version { .. }) => 4,
            HarnessError::Core(_) => 2,
            HarnessError::Io { .. } | HarnessError::Csv(_) => 4,
        }
    }
}

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

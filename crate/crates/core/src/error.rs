use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two grids that must agree on shape do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input is well-formed but carries nothing to work with (empty map, no present class).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("value out of range: {0}")]
    Range(String),

    /// Malformed file contents.
    #[error("data error: {0}")]
    Data(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 for configuration problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Range(_) | Error::UndefinedCorrelation(_) | Error::Json(_) => 2,
            Error::Dimension(_) | Error::DegenerateInput(_) | Error::Data(_) | Error::Io(_) => 3,
        }
    }
}

pub(crate) fn dim_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("undefined metric: {0}")]
    Metric(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable class used by the CLI on stderr.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "dimension",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Numerical(_) => "numerical",
            Error::Metric(_) => "metric",
            Error::Format(_) => "format",
            Error::Diverged(_) => "diverged",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

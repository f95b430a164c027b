use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter or argument is outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Floating point breakdown: non-finite values, failed factorizations, large residuals.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A matrix required to be Hurwitz (or Schur) is not.
    #[error("stability error: {0}")]
    Stability(String),
    /// An entry required to vanish by construction does not.
    #[error("structural error: {0}")]
    Structural(String),
    /// Every grid point of a reachability or synthesis sweep was infeasible.
    #[error("all grid points infeasible: {0}")]
    AllInfeasible(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

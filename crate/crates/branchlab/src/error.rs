use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("reachable set exceeded the truncation cap of {cap} states")]
    TruncationOverflow { cap: usize },
    #[error("matrix is not irreducible")]
    NotIrreducible,
    #[error("numerical instability: {0}")]
    Instability(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidLaw(_) | Error::Domain(_) | Error::Config(_) | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

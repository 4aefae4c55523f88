use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),
    #[error("empty histogram: no samples in range")]
    EmptyHistogram,
    #[error("point outside the domain: {0}")]
    Domain(String),
    #[error("control synthesis failed: {0}")]
    Control(String),
}

pub type Result<T> = std::result::Result<T, Error>;

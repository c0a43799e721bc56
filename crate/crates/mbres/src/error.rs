use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("chart singularity: |z| = {modulus:.6} for molecule {index} is within the guard band of 1/2")]
    ChartSingularity { index: usize, modulus: f64 },
    #[error("capacity exceeded: N = {n} is above the dense cap {cap}; use the polynomial method")]
    Capacity { n: usize, cap: usize },
}

impl Error {
    /// Numeric failures map to exit code 3 in the CLI; everything else is a validation problem.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::ChartSingularity { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

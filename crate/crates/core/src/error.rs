use thiserror::Error;

/// Location-tagged parse failure.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("malformed substitution: {0}")]
    MalformedSubstitution(String),

    #[error("expression is not polynomial: {0}")]
    NotPolynomial(String),

    #[error("||x||^{p} is not representable for {n} states with odd p; choose an even p")]
    UnrepresentableNorm { p: u32, n: usize },

    #[error("could not clear rational terms in x{var} with lambda <= {cap}")]
    ClearingFailure { var: usize, cap: u32 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degree mismatch: {0}")]
    DegreeMismatch(String),

    #[error("problem has {size} scalar unknowns, above the cap of {cap}")]
    DimensionCap { size: usize, cap: usize },

    #[error("FTS not certified at these degrees: {0}")]
    NoCertificate(String),

    #[error("malformed certificate: {0}")]
    Certificate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

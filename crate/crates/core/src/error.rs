use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("degenerate anchor at p = {p}: |K(p,p)| = {kpp:e} below floor {floor:e}")]
    DegenerateAnchor { p: f64, kpp: f64, floor: f64 },
    #[error("diagonal error: the integrable representation needs x != y (x = y = {0})")]
    Diagonal(f64),
    #[error("sequence degenerate: every probe point has vanishing A_n")]
    SequenceDegenerate,
    #[error("empty space: the Gram matrix has numerical rank 0")]
    EmptySpace,
    #[error("strong division violated at w = {center}: projection residual {residual:e} > {threshold:e}")]
    StrongDivisionViolated { center: f64, residual: f64, threshold: f64 },
    #[error("near spectrum: condition number {cond:e}, nearest eigenvalue {nearest}")]
    NearSpectrum { cond: f64, nearest: Complex64 },
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("capacity error: {len} points exceeds the cap of {cap}")]
    Capacity { len: usize, cap: usize },
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("pole error: z = {0} is a reflected pole")]
    Pole(Complex64),
    #[error("not a projection: eigenvalues span [{min}, {max}]")]
    NotAProjection { min: f64, max: f64 },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable name, used in CLI error reports.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Domain(_) => "DomainError",
            Error::Argument(_) => "ArgumentError",
            Error::DegenerateAnchor { .. } => "DegenerateAnchorError",
            Error::Diagonal(_) => "DiagonalError",
            Error::SequenceDegenerate => "SequenceDegenerateError",
            Error::EmptySpace => "EmptySpaceError",
            Error::StrongDivisionViolated { .. } => "StrongDivisionViolatedError",
            Error::NearSpectrum { .. } => "NearSpectrumError",
            Error::Precondition(_) => "PreconditionError",
            Error::Numeric(_) => "NumericError",
            Error::Capacity { .. } => "CapacityError",
            Error::IllConditioned(_) => "IllConditionedError",
            Error::Pole(_) => "PoleError",
            Error::NotAProjection { .. } => "NotAProjectionError",
            Error::Consistency(_) => "ConsistencyError",
            Error::Parse(_) => "ParseError",
            Error::Io(_) => "IoError",
        }
    }

    /// Validation failures (bad input) as opposed to numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Argument(_)
                | Error::Capacity { .. }
                | Error::Parse(_)
                | Error::Precondition(_)
                | Error::Diagonal(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

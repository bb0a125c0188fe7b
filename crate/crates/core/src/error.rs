use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    NearZeroVector { norm: f64 },
    #[error("rotation axis must be a unit vector orthogonal to e1")]
    InvalidAxis,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("dt * max gradient norm = {value} is not below 0.5")]
    StepTooLarge { value: f64 },
    #[error("configuration does not have winding number zero")]
    WindingNotZero,
    #[error("increment after site {site} is within the guard band of pi")]
    OutsideDomain { site: usize },
    #[error("effective sample size ratio {ratio:.3e} is below 0.01")]
    EffectiveSampleSizeTooLow { ratio: f64 },
    #[error("series of length {len} is shorter than the minimum {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("estimate did not converge: {0}")]
    NotConverged(String),
    #[error("state space of {states} states exceeds the limit {limit}")]
    StateSpaceTooLarge { states: usize, limit: usize },
    #[error("rare event hit {hits} times; Poisson upper bound {upper_bound:.3e}")]
    InsufficientRareEvents { hits: usize, upper_bound: f64 },
    #[error("start point is antipodal to the target")]
    AntipodalStart,
    #[error("spin {site} is not in the open hemisphere around the target")]
    HemisphereViolated { site: usize },
    #[error("spin {site} is not within epsilon of the equator")]
    NotNearEquator { site: usize },
    #[error("no cover label satisfies the path conditions")]
    NoLabelFound,
    #[error("malformed record: {0}")]
    BadRecord(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

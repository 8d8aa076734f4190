use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure modes shared by the numerical routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates its documented domain.
    InvalidParameter { name: &'static str, value: f64 },
    /// Call price outside `(max(e^x - e^k, 0), e^x)`.
    PriceOutOfBounds { log_strike: f64, price: f64, lower: f64, upper: f64 },
    /// An iterative solver ran out of iterations. `best` is the last iterate.
    NoConvergence { what: &'static str, best: f64, residual: f64, iterations: usize },
    /// A strike fell outside the interpolation domain of a smile.
    OutOfDomain { log_strike: f64, lower: f64, upper: f64 },
    /// Cholesky failed even after the maximum diagonal jitter.
    NotPsd { pivot: usize, value: f64, jitter: f64 },
    /// Conditional pricing requested on batches without W-driven integrals.
    BackendMismatch,
    /// An estimator is not defined for the supplied inputs.
    UndefinedEstimate(&'static str),
    /// Too few observations for a regression.
    InsufficientData { needed: usize, got: usize },
    /// The model carries no skew information (e.g. zero vol-of-vol).
    DegenerateModel(&'static str),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NoConvergence { .. } | Error::NotPsd { .. })
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter { name, value } => {
                write!(f, "invalid value {value} for `{name}`")
            }
            Error::PriceOutOfBounds { log_strike, price, lower, upper } => write!(
                f,
                "price {price:e} at log-strike {log_strike} outside no-arbitrage bounds ({lower:e}, {upper:e})"
            ),
            Error::NoConvergence { what, best, residual, iterations } => write!(
                f,
                "{what} did not converge after {iterations} iterations (best {best}, residual {residual:e})"
            ),
            Error::OutOfDomain { log_strike, lower, upper } => write!(
                f,
                "log-strike {log_strike} outside smile domain [{lower}, {upper}]"
            ),
            Error::NotPsd { pivot, value, jitter } => write!(
                f,
                "covariance not positive semidefinite: pivot {pivot} = {value:e} with jitter {jitter:e}"
            ),
            Error::BackendMismatch => {
                f.write_str("conditional pricing needs W-driven batches carrying path integrals")
            }
            Error::UndefinedEstimate(why) => write!(f, "estimate undefined: {why}"),
            Error::InsufficientData { needed, got } => {
                write!(f, "need at least {needed} observations, got {got}")
            }
            Error::DegenerateModel(why) => write!(f, "degenerate model: {why}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn ensure(cond: bool, name: &'static str, value: f64) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, value })
    }
}

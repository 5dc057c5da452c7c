//! Workspace-wide error type.

use std::fmt;

use crate::grid::GridFunction;

/// Everything that can go wrong across the library.
#[derive(Debug)]
pub enum Error {
    /// A precondition on caller-supplied data failed: bad domain bounds,
    /// mismatched grids, non-finite values, parameters out of range.
    Domain(String),
    /// The grid cannot resolve a requested feature.  The message names the
    /// resolution that would suffice.
    Resolution(String),
    /// The principal eigenvalue sits at or below the existence threshold, so
    /// no positive steady state exists.  Carries the certified value.
    NoPositiveSteadyState { mu0: f64 },
    /// An iterative method hit its cap before converging.  Carries the best
    /// iterate so the caller can inspect how far it got.
    IterationLimit {
        what: &'static str,
        iterations: usize,
        residual: f64,
        best: Box<GridFunction>,
    },
    /// An internal invariant broke (a monotone iteration rose, a bisection
    /// bracket lost its sign change).  Signals a bug, not bad input.
    Internal(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Resolution(msg) => write!(f, "resolution error: {msg}"),
            Error::NoPositiveSteadyState { mu0 } => write!(
                f,
                "no positive steady state: principal eigenvalue {mu0:.6e} is not above the existence threshold"
            ),
            Error::IterationLimit {
                what,
                iterations,
                residual,
                ..
            } => write!(
                f,
                "{what} hit the iteration cap ({iterations} iterations, residual {residual:.3e})"
            ),
            Error::Internal(msg) => write!(f, "internal invariant violated: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;

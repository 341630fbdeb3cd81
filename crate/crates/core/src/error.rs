//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Errors produced by grid construction, covariance estimation, and fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A constructor precondition was violated (bad sizes, counts, ranges).
    InvalidArgument(String),
    /// Two objects that must share a grid do not.
    GridMismatch { expected: usize, found: usize },
    /// An index was out of range.
    IndexOutOfRange { index: usize, len: usize },
    /// A variance that must be strictly positive was zero or negative.
    NonPositiveVariance { component: usize },
    /// The projected signal vanishes; the regression is degenerate.
    DegenerateSignal,
    /// The eigensolver or another numerical routine failed.
    Numerical(String),
    /// A non-finite value appeared where finite data is required.
    NonFinite(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::GridMismatch { expected, found } => {
                write!(f, "grid mismatch: expected n_grid={expected}, found {found}")
            }
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Error::NonPositiveVariance { component } => {
                write!(f, "non-positive variance at retained component {component}")
            }
            Error::DegenerateSignal => write!(f, "degenerate signal: all projected x are zero"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

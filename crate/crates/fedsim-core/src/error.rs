//! Error type shared by all simulation kernels.

use alloc::string::String;
use core::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure categories of the simulation kernels.
///
/// Every variant carries a human-readable message naming the offending
/// field, record, or dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Invalid configuration value (zero dims, infeasible size plan, ...).
    Config(String),
    /// Invalid data (sample with no labeled class, missing features, ...).
    Data(String),
    /// Train/test split cannot be formed as requested.
    Split(String),
    /// A pixel batch violates a forward-pass precondition.
    Batch(String),
    /// Loss is undefined for the given batch (e.g. all pixels ignored).
    Loss(String),
    /// Client updates cannot be aggregated (shape mismatch, empty set).
    Aggregation(String),
    /// Metric computation failed (shape mismatch, empty confusion matrix).
    Evaluation(String),
    /// A test image's domain has no owning client.
    Routing(String),
    /// An owning client has never participated, so its BN statistics
    /// do not exist yet.
    UninitializedStats(String),
}

impl Error {
    /// True for errors caused by invalid configuration rather than by
    /// data or runtime state.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Split(msg) => write!(f, "split error: {msg}"),
            Error::Batch(msg) => write!(f, "batch error: {msg}"),
            Error::Loss(msg) => write!(f, "loss error: {msg}"),
            Error::Aggregation(msg) => write!(f, "aggregation error: {msg}"),
            Error::Evaluation(msg) => write!(f, "evaluation error: {msg}"),
            Error::Routing(msg) => write!(f, "routing error: {msg}"),
            Error::UninitializedStats(msg) => {
                write!(f, "uninitialized-statistics error: {msg}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

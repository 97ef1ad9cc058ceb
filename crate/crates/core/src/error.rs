//! Error type shared across the crate.

use std::fmt;

/// Errors produced by geometry, simulation, signal and reconstruction code.
#[derive(Debug)]
pub enum TomoError {
    /// Transducer ring or grid geometry is unusable (too few elements, bad extents).
    InvalidGeometry(String),
    /// A phantom region declares a relative permittivity below 1.
    InvalidPermittivity(f64),
    /// The FDTD configuration violates the 2D stability bound or timing constraints.
    StabilityViolation(String),
    /// A probe or source position falls outside the usable (non-absorbing) region.
    InvalidProbe(String),
    /// Low-pass cutoff at or above the Nyquist frequency of the trace.
    InvalidFilter(String),
    /// Subset count outside `1..=source_count`.
    InvalidPartition(String),
    /// Regression design matrix has no nonzero column.
    ZeroDesignMatrix,
    /// A training-image scheme was requested before its iteration gate.
    SchemeNotAvailable { scheme: u8, iteration: u64 },
    /// Every pair of the selected subset is invalid; no residual can be formed.
    SubsetUnusable(usize),
    /// Residual requested over an empty valid set.
    NoValidPairs,
    /// Image metric requested over an empty mask.
    NoValidCells,
    /// Resolution bound requested with a non-positive permittivity contrast.
    InvalidContrast(f64),
    /// Median filter window must be odd and >= 1.
    InvalidWindow(usize),
    /// A spec/config file failed to parse or referenced an unknown builtin.
    SpecError(String),
    /// Checkpoint does not match the active configuration.
    CheckpointMismatch(String),
    /// No data available to report on.
    NoData(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for TomoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TomoError::InvalidGeometry(msg) => write!(f, "invalid geometry: {msg}"),
            TomoError::InvalidPermittivity(eps) => {
                write!(f, "invalid permittivity {eps}: relative permittivity must be >= 1")
            }
            TomoError::StabilityViolation(msg) => write!(f, "stability violation: {msg}"),
            TomoError::InvalidProbe(msg) => write!(f, "invalid probe: {msg}"),
            TomoError::InvalidFilter(msg) => write!(f, "invalid filter: {msg}"),
            TomoError::InvalidPartition(msg) => write!(f, "invalid partition: {msg}"),
            TomoError::ZeroDesignMatrix => write!(f, "regression design matrix is all zero"),
            TomoError::SchemeNotAvailable { scheme, iteration } => write!(
                f,
                "training scheme {scheme} is not available at iteration {iteration}"
            ),
            TomoError::SubsetUnusable(id) => {
                write!(f, "subset {id} has no valid source-receiver pairs")
            }
            TomoError::NoValidPairs => write!(f, "no valid pairs for residual"),
            TomoError::NoValidCells => write!(f, "no masked cells for image metric"),
            TomoError::InvalidContrast(d) => {
                write!(f, "invalid contrast {d}: delta epsilon must be > 0")
            }
            TomoError::InvalidWindow(w) => {
                write!(f, "invalid median window {w}: must be odd and >= 1")
            }
            TomoError::SpecError(msg) => write!(f, "spec error: {msg}"),
            TomoError::CheckpointMismatch(msg) => write!(f, "checkpoint mismatch: {msg}"),
            TomoError::NoData(msg) => write!(f, "no data: {msg}"),
            TomoError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for TomoError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            TomoError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for TomoError {
    fn from(e: std::io::Error) -> Self {
        TomoError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, TomoError>;

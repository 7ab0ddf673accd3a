//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A vector had the wrong length for the operation.
    DimensionMismatch { expected: usize, got: usize },
    /// A configuration value is outside its documented range.
    InvalidConfig(String),
    /// The requested (correlation, imbalance) pair admits no valid
    /// 2x2 cell distribution (Frechet bound violation).
    InfeasibleBias(String),
    /// An operation that requires data received none.
    EmptyInput,
    /// Dipole poles are too close to define a direction.
    DegeneratePoles { cosine: f64 },
    /// An index referred to a direction that does not exist in the world.
    DirectionOutOfRange { index: usize, count: usize },
    /// A plan referenced a warping field that was not supplied.
    MissingField { index: usize },
    /// Plan and pool disagree on which attribute is being balanced.
    PlanMismatch(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            CoreError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            CoreError::InfeasibleBias(msg) => write!(f, "infeasible bias spec: {msg}"),
            CoreError::EmptyInput => write!(f, "empty input"),
            CoreError::DegeneratePoles { cosine } => {
                write!(f, "degenerate dipole poles (cosine {cosine})")
            }
            CoreError::DirectionOutOfRange { index, count } => {
                write!(f, "direction index {index} out of range (world has {count})")
            }
            CoreError::MissingField { index } => {
                write!(f, "no warping field supplied for direction {index}")
            }
            CoreError::PlanMismatch(msg) => write!(f, "plan/pool mismatch: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

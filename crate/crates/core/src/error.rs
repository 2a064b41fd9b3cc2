use std::fmt;

use thiserror::Error;

/// Why an instance was rejected by [`crate::model::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationReason {
    NotSymmetric,
    NotPsd,
    DimensionMismatch,
    Nonfinite,
}

impl fmt::Display for ValidationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValidationReason::NotSymmetric => "NOT_SYMMETRIC",
            ValidationReason::NotPsd => "NOT_PSD",
            ValidationReason::DimensionMismatch => "DIMENSION_MISMATCH",
            ValidationReason::Nonfinite => "NONFINITE",
        };
        f.write_str(s)
    }
}

/// Why a point failed KKT verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotOptimalReason {
    InfeasiblePoint,
    StationarityFails,
}

impl fmt::Display for NotOptimalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NotOptimalReason::InfeasiblePoint => f.write_str("INFEASIBLE_POINT"),
            NotOptimalReason::StationarityFails => f.write_str("STATIONARITY_FAILS"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("VALIDATION_ERROR ({reason}): {detail}")]
    Validation { reason: ValidationReason, detail: String },
    #[error("DIMENSION_MISMATCH: {0}")]
    DimensionMismatch(String),
    #[error("SINGULAR: matrix is numerically singular")]
    Singular,
    #[error("NOT_SYMMETRIC: asymmetry {0:e} exceeds tolerance")]
    NotSymmetric(f64),
    #[error("INFEASIBLE_POINT: constraint {index} violated by {residual:e}")]
    InfeasiblePoint { index: usize, residual: f64 },
    #[error("NOT_OPTIMAL ({0})")]
    NotOptimal(NotOptimalReason),
    #[error("NOT_A_GRAPH_POINT: {0}")]
    NotAGraphPoint(Box<Error>),
    #[error("SCQ_FAILS: no Slater point exists for the nominal right-hand side")]
    ScqFails,
    #[error("NOMINAL_INFEASIBLE: the nominal feasible set is empty")]
    NominalInfeasible,
    #[error("NOMINAL_UNBOUNDED: the nominal objective is unbounded below")]
    NominalUnbounded,
    #[error("INCONSISTENT_NUMERICS: {0}")]
    InconsistentNumerics(String),
    #[error("D0_NOT_IN_FAMILY: {0} is not in the extended KKT family")]
    D0NotInFamily(String),
    #[error("NOT_LINEAR: Q is not the zero matrix")]
    NotLinear,
    #[error("NOT_SQUARE: A_D is {rows}x{cols} or singular")]
    NotSquare { rows: usize, cols: usize },
    #[error("TOO_LARGE: {0}")]
    TooLarge(String),
    #[error("SOLVER_FAILURE at radius {radius:e}, sample {sample}: {status}")]
    SolverFailure { radius: f64, sample: usize, status: String },
}

pub type Result<T> = std::result::Result<T, Error>;

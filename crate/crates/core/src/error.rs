//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, LabError>;

/// Failures surfaced by grid operations, solvers and estimators.
///
/// Variants carry enough context to name the offending quantity; callers that
/// map these onto process exit codes treat everything except `Io` as either a
/// validation error or a numerical abort.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("grid size {n} is not a power of two >= 4")]
    InvalidGridSize { n: usize },

    #[error("grid mismatch: {left} vs {right} cells per side")]
    GridMismatch { left: usize, right: usize },

    #[error("time nodes must be finite and strictly increasing (node {index})")]
    UnsortedTimes { index: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("checkerboard level {level} needs 2^{} | N but N = {n}", level + 1)]
    ResolutionInsufficient { level: u32, n: usize },

    #[error("advection step {dt:.3e} at t = {t:.6} exceeds the CFL budget {budget:.3e}")]
    CflViolation { t: f64, dt: f64, budget: f64 },

    #[error("non-finite field value at t = {t:.12} during {stage}")]
    NonFinite { t: f64, stage: &'static str },

    #[error("no closed-form flow for this velocity field")]
    NoClosedFormFlow,

    #[error("characteristic tracing step budget exceeded near t = {t:.3e}; start output at or after the field activation time")]
    StepBudgetExceeded { t: f64 },

    #[error("lipschitz budget is only defined for mollified fields")]
    NotMollified,

    #[error("sde step {dt:.3e} does not tile the interval [{lo:.6}, {hi:.6}]")]
    SlabMisaligned { dt: f64, lo: f64, hi: f64 },

    #[error("sample count {m} below the minimum {min}")]
    InsufficientSamples { m: usize, min: usize },

    #[error("diffusivity {nu:.3e} below the resolution guard {guard:.3e} for N = {n} (pass the override to run flagged)")]
    UnderResolved { nu: f64, guard: f64, n: usize },

    #[error("mollification scale {delta:.3e} below the grid guard {guard:.3e}")]
    DeltaUnderResolved { delta: f64, guard: f64 },

    #[error("adjoint mode requires the spectral-Galerkin scheme (linear one-step operators)")]
    AdjointNeedsLinearScheme,

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Numerical laboratory for advection and advection-diffusion on the periodic
//! plane, aimed at transport along divergence-free fields that are singular at
//! the initial time.
//!
//! The crate is organized in five layers:
//!
//! * [`torus`]: uniform periodic grids, spectral transforms, norms and
//!   pairings, space-time quadrature, and closed-form bump sources and test
//!   functions.
//! * [`velocity`]: exactly evaluable divergence-free fields, including a
//!   dyadic exchange field built from alternating shears on geometric time
//!   slabs, and mollification in space by a compactly supported kernel.
//! * [`evolve`]: forward and backward solvers for
//!   `d rho/dt + div(b rho) = nu Laplacian(rho) (+ source)`, with per-step
//!   energy ledgers and a discrete-adjoint mode whose forward/backward
//!   pairings agree to machine precision.
//! * [`stochastic`]: Feynman-Kac particle estimators for the same equations,
//!   driven by counter-based per-particle random streams.
//! * [`vanishing`]: experiment drivers that sweep the diffusivity or the
//!   mollification scale toward zero and record pairings, Cauchy gaps,
//!   dissipation, duality mismatches and weak-form residuals.
//!
//! Everything is deterministic: given the same inputs (including seeds and
//! worker counts for the stochastic layer), every run reproduces bit-identical
//! numbers.

pub mod error;
pub mod evolve;
pub mod stochastic;
pub mod torus;
pub mod util;
pub mod vanishing;
pub mod velocity;

pub use error::{LabError, Result};
pub use torus::bump::{SourceSpec, TestFunctionSpec, TestSide};
pub use torus::spectral::SpectralField;
pub use torus::{ScalarGridField, TorusGrid};
pub use velocity::{MollifierSpec, Orientation, VelocityField};

//! Numerical laboratory for an age and trait structured renewal population model.
//!
//! The crate is organised along the pipeline a study follows:
//!
//! * [`model`] holds the coefficient expressions, mutation kernels, initial data
//!   and the discretization grid, and checks the standing assumptions on them.
//! * [`eigen`] computes the per-trait principal eigentriple `(Λ, Q, Φ)` of the
//!   age operator, its gradient in the trait and the effective Hamiltonian.
//! * [`transport`] time-steps the ε-scaled renewal equation with the
//!   upwind implicit-explicit scheme and its nonlocal birth boundary.
//! * [`decomposition`] factorizes the density as `p·exp(u/ε)` and tracks the
//!   generalized relative entropy along a run.
//! * [`adaptive`] evaluates the ε → 0 limit objects: the constrained potential,
//!   the limit population size and the canonical equation for the dominant trait.
//! * [`hjb`] solves the nonlocal Hamilton-Jacobi equation of the mutation model.
//! * [`config`] reads run configuration files.

pub mod adaptive;
pub mod config;
pub mod decomposition;
pub mod eigen;
mod error;
pub mod hjb;
pub mod model;
pub mod quadrature;
pub mod transport;

pub use error::{Error, Result};

//! Catalytic activation of Bell nonlocality.
//!
//! The crate builds the shared catalyst, runs the local catalytic
//! transformation for any number of copies `n`, checks that the catalyst
//! is returned exactly, and certifies the nonlocality of the output with
//! register-conditioned Bell strategies. The instrument-based variants,
//! where the catalyst only has to come back after the measurements, live in
//! [`instruments`].
//!
//! Modules, bottom-up:
//! - [`qstate`]: labeled density matrices, partial traces, expectation values.
//! - [`states`]: maximally entangled, isotropic and random states; singlet fraction.
//! - [`bell`]: Bell functionals, correlations, local bounds, see-saw optimization.
//! - [`catalysis`]: the catalyst, the branch-resolved transform and its marginals.
//! - [`instruments`]: quantum instruments and the catalyticity conditions.

pub mod bell;
pub mod catalysis;
pub mod error;
pub mod instruments;
pub mod linalg;
pub mod qstate;
pub mod rng;
pub mod states;

pub use error::{Error, Result};
pub use qstate::{DensityMatrix, HermitianOperator, SubsystemKind, SubsystemLabel};

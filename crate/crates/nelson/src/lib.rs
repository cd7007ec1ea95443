//! Numerical laboratory for a hydrogen-like atom coupled to a massless
//! scalar Bose field (the Nelson model with an ultraviolet cutoff).
//!
//! Units: particle mass 1/2, hbar = c = 1. The coupling `e >= 0` is the
//! only physical parameter; the field cutoff `lambda` and an optional
//! infrared shift enter through [`modes::ModelParams`].
//!
//! The crate is organized bottom-up:
//!
//! * [`modes`]: form factor, coupling constants, discrete momentum grids
//! * [`fock`]: truncated bosonic Fock bases and sparse field operators
//! * [`wick`]: vacuum expectation values as contraction diagrams
//! * [`quad`]: adaptive quadrature, angular reduction, Monte Carlo
//! * [`spectral`]: ground-state solvers and the self-energy expansion
//! * [`lemma_lab`]: minimal form constants for the operator inequalities
//! * [`cli`]: the command-line front end and artifact serialization

pub mod cli;
pub(crate) mod dd;
mod error;
pub mod fock;
pub mod jsonio;
pub mod lemma_lab;
pub mod modes;
pub mod quad;
pub mod spectral;
pub mod wick;

pub use error::{Error, Result};

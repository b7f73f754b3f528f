//! Milne boundary-layer problem with geometric correction.
//!
//! The crate solves the half-line kinetic problem
//! `sin(phi) df/deta + F(eta, psi) cos(phi) df/dphi + f - fbar = S` on `[0, L]`
//! with in-flow or diffusive data at `eta = 0` and specular reflection at `L`,
//! evaluates the functionals used to study it, and checks the diffusive limit
//! of the transport equation on the unit ball by Monte Carlo.

// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod diffusive_limit;
pub mod error;
pub mod geometry;
pub mod io;
pub mod milne_solver;
pub mod phase_grid;
pub mod presets;
pub mod quadrature;
pub mod report;

pub use error::{Error, Result};

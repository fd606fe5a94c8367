//! Stationary first-order mean-field games on the flat torus, solved as
//! monotone variational inequalities.
//!
//! The crate is layered bottom-up: [`grid`] holds the periodic lattice and its
//! discrete calculus, [`hamiltonian`] the model families and their
//! certificates, [`infconv`] the infimal-convolution envelope, [`operator`]
//! the discrete MFG operator and residuals, [`solver`] the extragradient
//! method and [`continuation`] the `ε → 0` driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod continuation;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod infconv;
pub mod operator;
pub mod rng;
pub mod solver;

pub use error::{MfgError, Result};
pub use grid::{ScalarField, TorusGrid, Vect, VectorField};
pub use hamiltonian::{ExponentSet, Family, HamiltonianSpec, Kernel};
pub use operator::{MFGState, OperatorOutput, ProblemData};

//! A numerical laboratory for the spherical pure p-spin spin glass.
//!
//! The crate computes the closed-form constants of the model, samples
//! Hamiltonians, enumerates their critical points, evaluates the Kac-Rice
//! density of critical values and runs the extremal-process and perturbation
//! experiments.

pub mod critical_points;
pub mod error;
pub mod hamiltonian;
pub mod kac_rice;
pub mod perturbation;
pub mod quadrature;
pub mod random_matrix;
pub mod rng;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use theory::{solve_constants, ModelParams, TheoryConstants};

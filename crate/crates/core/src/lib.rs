//! Finite-difference solver for the lattice-gas steric Poisson–Boltzmann
//! equation and the classical Poisson–Boltzmann equation on a uniform cubic
//! grid.
//!
//! Potentials are dimensionless (`u = βeψ`, numerically equal to units of
//! k_BT/e), lengths are in Å and concentrations in ions/Å³ unless a field is
//! tagged otherwise.

pub mod assembly;
pub mod closure;
pub mod config;
pub mod dielectric;
pub mod error;
pub mod linsolve;
pub mod mesh;
pub mod newton;
pub mod pipeline;
pub mod postproc;
pub mod solute;
pub mod vtk;

pub use error::{Error, Result};

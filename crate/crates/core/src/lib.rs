//! Travel-time tomography of relative-permittivity maps.
//!
//! The pipeline simulates ultra-wideband pulse propagation through a 2D
//! permittivity phantom with an FDTD solver, extracts first-arrival times at
//! a ring of receivers, and reconstructs the sqrt-permittivity image with an
//! iterative regression-on-random-perturbations update accelerated by
//! ordered subsets and a coarse-to-fine resolution schedule.

pub mod config;
pub mod error;
pub mod fdtd;
pub mod filters;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod projection;
pub mod recon;
pub mod signal;

pub use error::{Result, TomoError};

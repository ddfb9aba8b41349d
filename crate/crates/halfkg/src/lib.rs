//! Numerical laboratory for half Klein-Gordon and cubic Dirac evolutions on
//! weakly asymptotically flat metrics: spectral grids, metric geometry,
//! pseudodifferential projectors, FBI transforms, Hamilton flows with damping,
//! propagators and the norms used to measure dispersion.

pub mod error;
pub mod evolve;
pub mod exec;
pub mod flow;
pub mod grid;
pub mod jet;
pub mod measure;
pub mod metric;
pub mod pdo;
pub mod phasespace;
pub mod profile;
pub mod spin;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

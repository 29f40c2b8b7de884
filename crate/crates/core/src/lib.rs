//! Numerical laboratory for the inverse refractive-index problem of the
//! Helmholtz equation `(Δ + k²q)u = 0` on the unit box.
//!
//! The pipeline runs from finite-difference Dirichlet-to-Neumann maps,
//! through complex geometrical optics solutions and Born-type Fourier
//! samples, to truncated Fourier inversion and frequency sweeps.

pub mod born;
pub mod cgo;
pub mod dn;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod io;
pub mod linalg;
pub mod reconstruct;
pub mod spectral;

pub use error::{Error, Result};

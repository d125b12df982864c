//! Pseudo-spectral 2D incompressible Navier-Stokes on the periodic torus,
//! with discrete-in-time nudging data assimilation from noisy local-average
//! observations, outlier filtering, and a deterministic ensemble harness.

pub mod assimilation;
pub mod checkpoint;
pub mod error;
pub mod etdrk4;
pub mod fft;
pub mod field;
pub mod grid;
pub mod noise;
pub mod nonlinear;
pub mod observables;
pub mod parallel;
pub mod rng;

pub use error::{Error, Result};
pub use field::{Norms, PhysicalField, SpectralField};
pub use grid::Grid;

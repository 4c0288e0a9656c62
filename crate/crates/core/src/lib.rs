//! Quasi-periodic functions on `R^n` as truncated Fourier series over a
//! `Z^M` mode lattice, and the incompressible Euler equation in these spaces.

pub mod cli;
pub mod config;
pub mod diffeo;
pub mod error;
pub mod field;
pub mod io;
pub mod lattice;
pub mod operators;
pub mod oracle;
pub mod presets;
pub mod solver;
pub mod torus_fft;

pub use error::{QpError, Result};
pub use field::{NormParams, QPScalar, QPVectorField};
pub use lattice::{canonical_omega, check_nonresonance, FrequencyMatrix, ModeIndex, ModeSet};

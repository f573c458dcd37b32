//! Multi-peak solutions of `-eps^2 Δu + V(x) u = u log u^2` on a truncated box.
//!
//! The crate builds solutions of the form `u = Σ_j U_j + φ`, where each `U_j` is a
//! Gaussian profile centred near a critical point of `V` and `φ` is a small correction.
//! It also ships the instruments used to check them: a Pohozaev residual, decay
//! tables, a spectrum probe, and an independent Newton solver.

pub mod error;
pub mod math;
pub mod nonlinearity;
pub mod potential;
pub mod grid;
pub mod ansatz;
pub mod io;
pub mod krylov;
pub mod linop;
pub mod reduction;
pub mod peaksolve;
pub mod verify;
pub mod oracle;
pub mod cli;

pub use error::{Error, Result};

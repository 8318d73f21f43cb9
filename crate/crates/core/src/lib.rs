//! Radial steady states of `−Δu + u = λe^u` on the unit disk with Neumann data:
//! singular and layered Green functions, the layer nondegeneracy determinant,
//! the matched-asymptotic ansatz, weighted residual norms, a contraction
//! correction and direct boundary-value solves with continuation.

pub mod analysis;
pub mod ansatz;
pub mod bvp;
pub mod error;
pub mod fv;
pub mod grid;
pub mod greens;
pub mod linalg;
pub mod nondegen;
pub mod ode;
pub mod specfun;

pub use error::{KsError, Result};
pub use grid::{GridSpec, Piece, Profile};
pub use greens::{LayerConfig, OuterMode, PiecewiseGreen};
pub use specfun::{BesselEval, BesselPair};

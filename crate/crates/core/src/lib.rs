//! Finite-difference solver for a 2D magneto-viscoelastic fluid, with its
//! linearization, discrete adjoint and reduced-gradient optimal control.

// index loops mirror the stencil formulas; `!(a <= b)` also rejects NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod linearized;
pub mod par;
pub mod poisson;
pub mod rng;
pub mod snapshot;
pub mod state;
pub mod stencil;

pub use error::{Error, Result};
pub use grid::{Bc, Field, Grid, ScalarField, Tensor22Field, Vector2Field, Vector3Field};
pub use krylov::{SolveReport, SolverOptions};

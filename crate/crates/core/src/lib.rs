//! Adaptive space-time finite elements for non-linear convection-diffusion
//! problems with a Lipschitz noise term, together with residual-based a
//! posteriori error estimators.

// Element loops index several local arrays at once, and `!(x > 0.0)` style
// checks are there to reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptivity;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod expr;
pub mod fem;
pub mod field;
pub mod mesh;
pub mod par;
pub mod problem;
pub mod solver;
pub mod stabilization;
pub mod stepper;
pub mod verification;

pub use error::{Error, Result};

//! Numerical laboratory for causal variational principles on weighted point
//! measures.
//!
//! The crate minimizes the causal action `S(rho) = sum_ij w_i w_j L(x_i, x_j)`
//! at fixed total volume and then audits the result with the second-order
//! machinery: Hessian positivity of `l`, second variations generated by jets
//! (with and without fragmentation), the two jet-space bilinear forms, the
//! linearized field equations and the surface layer integral.
//!
//! Runnable walkthroughs live in `examples/`; `causal-lab` is a thin CLI over
//! [`run`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod jets;
pub mod lagrangian;
pub mod linfield;
pub mod manifold;
pub mod measure;
pub mod optimizer;
pub mod run;
pub mod state;
pub mod variations;

pub use error::{Error, Result};
pub use lagrangian::{LagrangianModel, ModelSpec};
pub use manifold::{ChartManifold, Point};
pub use measure::DiscreteMeasure;

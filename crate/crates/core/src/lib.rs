//! Boundary-degenerate linear parabolic operators with partial Dirichlet
//! data: boundary classification, monotone finite-difference solvers for
//! terminal-value and obstacle problems, and a harness that checks discrete
//! maximum-principle estimates.

pub mod assembly;
pub mod banded;
pub mod config;
pub mod error;
pub mod expr;
pub mod fichera;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod mms;
pub mod obstacle;
pub mod operator;
pub mod solver;
pub mod suite;

pub use error::{Error, Result};

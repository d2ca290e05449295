//! Mean-field analysis of large bike-sharing systems whose rental and
//! return rates are modulated by a shared Markovian environment.
//!
//! The crate covers the environment construction, the tagged-station rate
//! functions, the block-tridiagonal generator, the nonlinear stationary
//! equation, the mean-field ODE, a finite-`N` simulator and the derived
//! performance measures.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod generator;
pub mod meanfield;
pub mod measures;
pub mod model;
pub mod qbd;
pub mod rates;
pub mod simulator;

pub use env::{DaySegmentation, Environment, RateProfile, Segment};
pub use error::{Error, Result};
pub use generator::{assemble, AssemblyMode, BlockTridiagonal};
pub use model::{LevelRange, MeanFieldVector, ModelParams};
pub use qbd::{linear_qbd_solve, solve_fixed_point, FixedPoint, FixedPointOptions};
pub use rates::{RateTable, Scale};

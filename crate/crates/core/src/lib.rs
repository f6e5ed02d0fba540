//! Coupled Fokker–Planck / Hamilton–Jacobi–Bellman solver for state-constrained
//! stochastic optimal control, with an augmented Lagrangian treatment of
//! expectation constraints.
//!
//! The concrete application is a photovoltaic plant with battery storage:
//! the state is (clear-sky index, spot price, stored energy) and the control
//! is the battery power. Reduced one- and two-dimensional formulations,
//! Monte Carlo policy evaluation, day-ahead bids and three benchmark
//! controllers (price threshold, time-of-use, sampled MPC) are included.

// Negated comparisons reject NaN on purpose; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod alm;
pub mod benchmarks;
pub mod config;
pub mod curve;
pub mod error;
pub mod fp;
pub mod generator;
pub mod grid;
pub mod hjb;
pub mod io;
pub mod linalg;
pub mod model;
pub mod par;
pub mod reduction;
pub mod runner;
pub mod sim;

pub use error::{Error, Result};

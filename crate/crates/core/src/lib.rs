//! Numerical toolkit for slow-fast systems driven by fractional Brownian motion.
//!
//! The crate covers four layers:
//!
//! * grid-based fractional calculus ([`frac_calc`]) and the Cameron–Martin
//!   operators of fBm ([`cameron_martin`]),
//! * exact-covariance fBm sampling ([`fbm_gen`]) and Euler time stepping of
//!   the slow-fast system and its controlled version ([`multiscale_sim`]),
//! * the one-dimensional cell problem and invariant-measure averaging
//!   ([`poisson_cell`]),
//! * large-deviation rate functionals ([`rate_fn`]) and plain Monte Carlo
//!   checks of the Laplace asymptotics ([`ldp_harness`]).
//!
//! Heavy loops go through [`Execution`], which fans out over rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise. Results are
//! collected in index order, so both modes produce identical output.

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cameron_martin;
pub mod coefficients;
pub mod error;
pub mod exec;
pub mod fbm_gen;
pub mod frac_calc;
pub mod grid;
pub mod ldp_harness;
pub mod linalg;
pub mod multiscale_sim;
pub mod poisson_cell;
pub mod quadrature;
pub mod rate_fn;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::GridPath;

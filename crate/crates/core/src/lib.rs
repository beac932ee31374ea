//! Curvature-induced bound states of a quantum particle in a mildly curved
//! hard-wall layer, computed by three mutually validating routes:
//!
//! 1. closed-form weak-coupling asymptotics of the ground-state gap,
//! 2. a Birman-Schwinger implicit-equation solver on the planar comparison
//!    operators, accurate even when the gap is exponentially small,
//! 3. a direct mode-coupled finite-difference eigensolver realizing the
//!    bracketing H- <= H <= H+.
//!
//! The layer is built over a Monge-patch surface (x1, x2, eps f(x1, x2)) of
//! half-width a; the essential spectrum starts at kappa_1^2 = (pi/2a)^2 and
//! the single weakly bound state sits at E = kappa_1^2 - exp(2/w) with w < 0.

// Guards of the form `!(x > 0.0)` are deliberate: they reject NaN along with
// the out-of-domain sign.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod birman_schwinger;
pub mod direct_solver;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod grid;
pub mod kernels;
pub mod planar;
pub mod specfun;
pub mod transverse;

pub use error::{Error, Result};
pub use grid::{Field2, Grid2D};

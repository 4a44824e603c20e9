//! Semilinear elliptic equations driven by spectral and integral fractional
//! diffusion, and box-constrained optimal control of them.
//!
//! The state equation is `A u + f(x, u) = z` on a bounded interval or
//! rectangle with homogeneous Dirichlet (exterior) data, where `A` is either
//! the spectral fractional power of a second-order elliptic operator
//! ([`spectral`]) or the integral fractional Laplacian ([`integral`]). The
//! control problem minimizes `½‖u − u_d‖² + (μ/2)‖z‖²` subject to
//! `z_a ≤ z ≤ z_b` ([`optimizer`]), with adjoint-based derivatives
//! ([`sensitivity`]) and probes of first- and second-order optimality.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod integral;
pub mod nonlinearity;
pub mod operator;
pub mod optimizer;
pub mod quadrature;
pub mod sensitivity;
pub mod spectral;
pub mod state;

pub use error::{Error, Result};
pub use grid::{inner, lp_norm, project_box, ControlBox, Domain, Grid, GridFunction};
pub use integral::{build_integral, IntegralOperator};

pub use operator::{Backend, FractionalOperator};
pub use spectral::{build_spectral, EllipticCoefficient, SpectralOperator};

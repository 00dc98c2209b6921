//! Numerical laboratory for the singular elliptic problem
//! `-div(M grad u) = f / u^gamma` with homogeneous Dirichlet data.

// `!(x > 0.0)` is the NaN-rejecting guard throughout; index loops mirror the stencils.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::excessive_precision
)]

pub mod asymptotics;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod oned;
pub mod singular;

pub use error::{Error, Result};

// NaN must fail these guards, hence `!(x > 0.0)` rather than `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod kernels;
pub mod ode;
pub mod params;
pub mod poincare;
pub mod quad;
pub mod spectrum;
pub mod sum;

pub use error::{Error, Result};

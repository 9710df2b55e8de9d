//! Free-space quantum channel models for ground stations and high-altitude
//! balloons, with Monte Carlo key-rate estimation.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beam_dynamics;
pub mod channel;
pub mod collection;
pub mod coupling;
pub mod distribution;
pub mod error;
pub mod geometry;
pub mod netsim;
pub mod quadrature;
pub mod scenario;
pub mod special;
pub mod transmittance;
pub mod turbulence;

pub use error::{Error, Result};

//! Analytic electro-thermal model of a bondwire embedded in a mould compound.
//!
//! The wire temperature is a Kirchhoff-transformed separable series, the
//! compound temperature is a sum of separable Robin series plus a heat-kernel
//! convolution with the heat leaving the wire, and the two are tied together
//! by a pair of effective constants found by fixed-point iteration. A
//! Newton-Raphson fitter with SVD truncation and pivoted-QR parameter subset
//! selection calibrates the model against fusing events.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compound;
pub mod config;
pub mod coupling;
pub mod data_io;
pub mod error;
pub mod fd_oracle;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod spectral;
pub mod verify;
pub mod wire;

pub use error::{Error, Result};

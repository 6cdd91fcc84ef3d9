//! Evaluation, loss and raster-target toolkit for mapless driving perception.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod synthetic;

pub use error::{Error, Result};

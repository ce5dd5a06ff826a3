//! Robust trajectory and power planning for a UAV-borne SAR that streams its
//! raw data to a ground station in real time.

// NaN must fail validation, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod monotonic;
pub mod robust;
pub mod sca;
pub mod sim;
pub mod subproblem;

pub use error::{Error, Result};

//! Koopman bilinear modelling and bilinear MPC for a tractor-trailer with
//! unknown slip.

pub mod bilinear;
pub mod config;
pub mod container;
pub mod edmd;
pub mod error;
pub mod lie;
pub mod lifting;
pub mod mpc;
pub mod pipeline;
pub mod plant;
pub mod qp;

pub use error::{Error, Result};

/// Version string embedded in every emitted file.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

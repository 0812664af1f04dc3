//! Windowed decay-rate analysis and concave comparison functions for control
//! Lyapunov function synthesis.

pub mod actuation;
pub mod cli;
pub mod comparison;
pub mod error;
pub mod plant;
pub mod qp;
pub mod sim;
pub mod tuning;
pub mod quadrature;
pub mod windowed;

pub use error::{Error, Result};

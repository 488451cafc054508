//! Federated-learning simulation with robust server-side aggregation.
//!
//! The crate provides a logistic model and local client training
//! ([`model`]), the aggregation rules including the AND-mask / trimmed-mean
//! composition ([`aggregation`]), synthetic Gaussian client data with a
//! colluding backdoor ([`synthdata`]), Monte Carlo checks of the robustness
//! bounds ([`theory`]), and the synchronous round loop ([`harness`]).

pub mod aggregation;
pub mod error;
pub mod harness;
pub mod model;
pub mod rng;
pub mod synthdata;
pub mod theory;

pub use error::{Error, Result};

//! Distributed off-policy actor-critic learning for continuous control.

pub(crate) mod codec;
pub mod agents;
pub mod algorithms;
pub mod config;
pub mod distributional;
pub mod ensemble;
pub mod env;
pub mod error;
pub mod exploration;
pub mod nn;
pub mod replay;
pub mod runtime;

pub use error::{Error, Result};

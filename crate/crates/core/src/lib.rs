//! Continual learning by packing FLOP-budgeted sparse subnetworks into one
//! dense supernet, plus theory probes on planted models.

pub mod cli;
pub mod engine;
pub mod error;
pub mod flops;
pub mod harness;
pub mod mask;
pub mod nn;
pub mod pruning;
pub mod rng;
pub mod tasks;
pub mod theory;

pub use error::{Error, Result};

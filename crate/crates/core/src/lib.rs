//! Loss-tolerant EPR-steering: bounds against cheating strategies, protocol
//! simulation, and the experimental error analysis.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod simulator;
pub mod strategies;

pub use error::{Result, SteeringError};

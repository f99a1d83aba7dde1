//! Decentralized training and inference for task-oriented edge networks.
//!
//! Edge nodes encode local observations into power-limited analog messages,
//! send them over simulated fading fronthaul links, and a multi-branch cloud
//! model fuses them. Training runs in communication rounds in which the
//! cloud returns per-node gradient messages over the downlink.

pub mod channel;
pub mod cloud;
pub mod edge;
pub mod error;
pub mod harness;
pub mod nn;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};

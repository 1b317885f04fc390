//! Sparse subnetwork training on small dense networks.
//!
//! The crate compares ways of obtaining a trainable sparse subnetwork from a
//! randomly initialized dense network: training a random subnetwork from
//! scratch, lottery-ticket magnitude pruning with weight rewinding (one-shot,
//! iterative and early-stopped), L1 pruning of a pretrained network, and the
//! random sparse network transformation (RST), which suppresses the weights
//! outside a random mask with a growing L2 penalty before removing them.

pub mod error;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, NodeId, Tensor};
pub mod data;
pub mod mask;
pub mod network;
pub mod optim;
pub mod strategies;
pub mod experiment;

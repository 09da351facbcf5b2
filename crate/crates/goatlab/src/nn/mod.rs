//! Minimal dense-network substrate: networks, gradients, Adam, checkpoints.

mod adam;
pub mod checkpoint;
mod net;

pub use adam::{AdamConfig, AdamState};
pub use net::{finite_diff_grad, Activation, Network, OutputActivation, ParamGrads};

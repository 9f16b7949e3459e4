//! Tandem learning for spiking neural networks.
//!
//! Every layer keeps one weight set read by an integrate-and-fire spiking
//! layer and by an analog layer that predicts its spike count. The forward
//! pass runs both, with exact spike counts passed between layers; the
//! backward pass differentiates only the analog side.

pub mod activation;
pub mod cli;
pub mod codec;
pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod neuron;
pub mod synapse;
pub mod tensor;
pub mod train;

pub use error::{Result, TandemError};

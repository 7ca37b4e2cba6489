//! Simulation of bidirectional federated knowledge distillation over non-IID,
//! long-tailed classification data, with FedMD and FedAvg baselines and exact
//! communication/computation cost accounting.

pub mod error;
pub mod matrix;
pub mod nn;

pub use error::{Error, Result};
pub use matrix::LogitMatrix;
pub mod data;
pub mod losses;
pub mod metrics;
pub mod payload;
pub mod cost;
pub mod protocol;
pub mod cli;
pub mod sweep;

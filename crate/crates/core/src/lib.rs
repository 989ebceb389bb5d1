//! Read-channel lab for resistive memories: channel simulation, optimum
//! thresholds, neural detectors, the dynamic threshold detector and
//! Monte-Carlo evaluation.

pub mod analytic;
pub mod channel;
pub mod dataset;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;

pub use channel::{Block, ChannelParams, NoiseModel, QuantizerSpec};
pub use detectors::{Detector, DtdResult};
pub use error::{Error, Result};
pub use nn::{Model, ModelKind, Network, TrainConfig};

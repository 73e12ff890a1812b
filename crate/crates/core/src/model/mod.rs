//! Residual CNN feature extractor, LSTM and output head.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::Checkpoint;
pub use config::{AirResConfig, Architecture, LstmConfig, ModelConfig};
pub use network::{AirRes, BnLayer, ConvLayer, DeepAirModel, ResidualUnit, TrainStats};

//! Hybrid residual-CNN / LSTM models for fine-grained urban air pollution
//! estimation and station-level forecasting.

pub mod error;
pub mod formats;
pub mod grid;
pub mod inference;
pub mod model;
pub mod training;
pub mod numerics;
pub mod saliency;
pub mod synthcity;

pub use error::{Error, Result};
pub use numerics::{ParamStore, Rng, Tape, Tensor, Var};

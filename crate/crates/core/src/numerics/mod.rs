//! Dense tensors, a gradient tape and the layers the network is built from.

mod kernels;
pub mod lstm;
mod params;
mod rng;
mod tape;
mod tensor;

pub use lstm::{lstm_step, LstmLayer, LstmVars};
pub use params::{sgd_step, ParamId, ParamStore, Parameter};
pub use rng::Rng;
pub use tape::{BnMode, Gradients, RunningStats, Tape, Var, BN_EPSILON, BN_MOMENTUM};
pub use tensor::Tensor;

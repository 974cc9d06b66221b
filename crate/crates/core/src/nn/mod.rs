//! Dense numerical core: parameter storage, fixed-topology perceptrons with
//! hand-written reverse-mode gradients, Adam, and binary checkpoints.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod mlp;
mod store;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::TensorRecord;
pub use mlp::{sigmoid, softplus, Linear, Mlp, MlpTrace, OutputActivation};
pub use store::{Gradients, Param, ParamGroup, ParamId, ParamStore};

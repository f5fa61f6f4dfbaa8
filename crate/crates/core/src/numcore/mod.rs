//! Dense `f64` tensors, a reverse-mode tape, and the handful of layers the
//! denoiser needs.

mod adam;
mod checkpoint;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    checkpoint_bytes, parse_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use graph::{Graph, Var};
pub use kernels::GROUPNORM_EPS;
pub use params::TensorMap;
pub use tensor::Tensor;

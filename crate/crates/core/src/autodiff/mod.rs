//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to its nodes; [`Tape::backward`]
//! sweeps the record in reverse, which is a valid topological order because
//! nodes can only refer to earlier nodes. Tensors are row-major and generic
//! over `f32`/`f64` through [`Element`].

mod checkpoint;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, grad_check_coords, grad_check_on, relative_error};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{DType, Element, ParamSet, Parameter, Tensor};

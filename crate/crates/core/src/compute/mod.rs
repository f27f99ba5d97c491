//! Dense tensors, hand-chained layers and gradient verification.

pub mod gradcheck;
pub mod gru;
pub mod kernels;
pub mod ops;
mod scalar;
mod tensor;
pub mod verify;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use gru::{bidirectional_scan, gru_cell, BiGru, GruCell, SeqBatch};
pub use scalar::Scalar;
pub use tensor::{GradBuffer, ParamId, ParamStore, Parameter, Tensor};

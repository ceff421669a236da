// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense tensors, a reverse-mode tape, and the Adam optimizer.

mod array;
mod optim;
mod params;
mod scalar;
mod tape;

pub use array::Tensor;
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use scalar::{gemm, DType, MatRef, Scalar};
pub use tape::{Tape, Var, LAYERNORM_EPS};

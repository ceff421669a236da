// SPDX-License-Identifier: MIT OR Apache-2.0

//! Train small decoder-only transformers on a text-rendered
//! context-dependent decision task and take them apart: head ablation,
//! attention maps, hidden-state probes, head-output decoding and
//! hidden-state projection.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod interp;
pub mod model;
pub mod task;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};

//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! The primitive set is fixed (see [`Tape`]); there is no general
//! broadcasting. Networks are assembled from [`nn`] layers whose weights live
//! in a [`ParamSet`] and are optimised with [`Adam`].

mod adam;
pub mod checkpoint;
pub mod nn;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use params::{Bound, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { shape: [usize; 2], len: usize },
    #[error("node {index} was never recorded on this tape ({len} nodes); run the forward pass first")]
    NotRecorded { index: usize, len: usize },
    #[error("non-finite gradient for parameter `{name}` at optimiser step {step}")]
    NonFiniteGradient { name: String, step: u64 },
    #[error("gradient for `{name}` has shape {got:?}, parameter has {expected:?}")]
    GradientShape {
        name: String,
        expected: [usize; 2],
        got: [usize; 2],
    },
}

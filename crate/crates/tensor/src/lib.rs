//! Minimal dense tensor engine with define-by-run reverse-mode
//! differentiation.
//!
//! Values are row-major `f32`; dot products and sums accumulate in `f64`.
//! Every op is deterministic and independent of thread count.

mod error;
pub mod gradcheck;
mod kernels;
mod rng;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use rng::Rng;
pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::{broadcast_shape, numel, Tensor};

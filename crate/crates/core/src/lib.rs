//! Core of the U-KAN toolkit: a dense tensor type with reverse-mode
//! automatic differentiation, the convolution/normalization primitives,
//! B-spline Kolmogorov-Arnold layers, and the U-shaped segmentation and
//! diffusion models built from them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). Use `f64`
//! for gradient checks and oracles and `f32` for training runs; a single
//! graph never mixes the two.

pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod flops;
pub mod kan;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Result, TensorError};
pub use model::{MixerKind, Profile, Ukan, UkanConfig};
pub use params::{Init, ParamId, ParamStore, Session};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;

//! Convolution, normalization, pooling and activation primitives, plus the
//! parameterized layer wrappers used by the models.

pub mod conv;
pub mod layers;
pub mod norm;
pub mod pool;

pub use conv::{conv2d, depthwise_conv, ConvGeometry};
pub use layers::{linear, BatchNorm2d, Conv2d, LayerNorm, Linear};
pub use norm::{batch_norm_eval, batch_norm_train, layer_norm, BatchStats};
pub use pool::{bilinear_resize, bilinear_taps, maxpool2x2, upsample_bilinear2x};

use crate::autodiff::Var;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// Linear (no-op).
    #[default]
    Identity,
    Relu,
    Silu,
}

impl Activation {
    pub fn apply<'t, T: Scalar>(self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => x.relu(),
            Activation::Silu => x.silu(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        }
    }

    /// FLOPs charged per element.
    pub fn flops_per_element(self) -> u64 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Silu => 4,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "silu" => Ok(Activation::Silu),
            other => Err(TensorError::invalid("activation", format!("unknown kind {other:?}"))),
        }
    }
}

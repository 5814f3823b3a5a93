//! Dense tensors and hand-written forward/backward kernels for the image
//! translation model. Everything is generic over `f32` and `f64`; the double
//! path exists for gradient checking.

mod act;
mod conv;
mod gemm;
mod loss;
mod norm;
mod optim;
mod tensor;

pub use act::{activation, activation_backward, dropout, dropout_backward, Activation, Mode};
pub use conv::{
    conv2d, conv2d_backward, conv_out_dim, conv_transpose2d, conv_transpose2d_backward,
    conv_transpose2d_sized, deconv_out_dim, ConvGrads,
};
pub use gemm::{gemm, gemm_bt};
pub use loss::{bce_loss, l1_loss, BCE_CLAMP};
pub use norm::{batchnorm, batchnorm_backward, update_running_stats, BatchNorm, BnCache, BN_EPS, BN_MOMENTUM};
pub use optim::{AdamConfig, AdamState};
pub use tensor::{Param, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T, NnError> {
    Err(NnError::Shape(msg.into()))
}

/// Floating-point element type.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

//! Dense binary64 tensors, the handful of differentiable ops the super-network
//! needs, and the ADAM update.

mod gradcheck;
mod ops;
mod params;
mod tensor;

pub use gradcheck::grad_check;
pub use ops::{
    conv2d, conv2d_backward, conv2d_output_dims, gru_backward, gru_cell, linear, linear_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, softmax_xent, ConvGrads, GruCache, GruGrads,
    GruParams, LinearGrads, Stride,
};
pub use params::{adam_step, AdamConfig, Gradients, ParamStore};
pub use tensor::Tensor;

//! Minimal dense tensor engine with reverse-mode differentiation.
//!
//! Provides exactly the operators the guided VAE needs: strided convolution
//! and its transpose, dense layers, pointwise activations, the spike
//! nonlinearity with a surrogate derivative, and fused loss reductions.

mod conv;
mod gemm;
mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use graph::{surrogate_derivative, Graph, SpikeForward, Var};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::Tensor;

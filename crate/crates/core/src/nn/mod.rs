//! Minimal CPU network kernel: a 4-d tensor, the handful of layers the two
//! forecasting models need (each with an explicit backward pass), masked
//! MSE, Adam/SGD and a finite-difference gradient checker.
//!
//! Everything is `f64` and single-threaded; reductions run in a fixed order
//! so a seeded training run is bit-reproducible.

mod conv;
mod dense;
pub mod gradcheck;
mod init;
mod loss;
mod optim;
mod pool;
mod tensor;

pub use conv::{Conv2d, ConvTranspose2d};
pub use dense::{concat_channels, crop, split_channels, uncrop, Dense, Relu};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, GradCheckable, LayerProbe};
pub use init::he_uniform;
pub use loss::masked_mse;
pub use optim::{Optimizer, OptimizerConfig};
pub use pool::MaxPool2;
pub use tensor::{Param, Tensor};

use crate::error::Result;

/// A differentiable layer. `backward` must follow the `forward` whose input
/// it differentiates; parameter gradients accumulate until zeroed.
pub trait Layer {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;

    /// Returns the gradient with respect to the last forward input.
    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

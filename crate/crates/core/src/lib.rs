//! Coupled activation/weight ODE networks.
//!
//! Activations are integrated with forward Euler through residual blocks while the
//! convolution kernels feeding each step evolve under a reaction-diffusion-advection
//! operator that is solved exactly in the frequency domain. Gradients come from
//! reverse-mode differentiation of the discrete solver, with checkpointed recompute.

pub mod adjoint;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod kernel;
pub mod layers;
pub mod models;
pub mod nn;
pub mod ode;
pub mod params;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use kernel::KernelField;
pub use tensor::Tensor4;

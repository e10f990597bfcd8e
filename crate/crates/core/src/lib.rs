#![no_std]
#![doc = include_str!("../README.md")]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adversarial;
pub mod autograd;
pub mod error;
pub mod flow;
pub mod lattice;
pub mod mcmc;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod synthetic;
pub mod target;
pub mod tensor;
pub mod train;

pub use autograd::{Graph, UnaryFn, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

//! Unnormalised log-densities consumed by the reverse-KL loss and IMH.

use alloc::vec;

/// An unnormalised log-density on ℝ^dim with its gradient.
///
/// A non-finite return value marks a point outside the target's domain.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn log_prob(&self, x: &[f64]) -> f64 {
        let mut grad = vec![0.0; x.len()];
        self.log_prob_grad(x, &mut grad)
    }

    /// Returns `log p(x)` and writes `∇ₓ log p(x)` into `grad`.
    fn log_prob_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_prob(&self, x: &[f64]) -> f64 {
        (**self).log_prob(x)
    }
    fn log_prob_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_prob_grad(x, grad)
    }
}

impl<T: LogDensity + ?Sized> LogDensity for alloc::boxed::Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_prob(&self, x: &[f64]) -> f64 {
        (**self).log_prob(x)
    }
    fn log_prob_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_prob_grad(x, grad)
    }
}

impl<T: LogDensity + ?Sized> LogDensity for alloc::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_prob(&self, x: &[f64]) -> f64 {
        (**self).log_prob(x)
    }
    fn log_prob_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_prob_grad(x, grad)
    }
}

/// Standard normal on ℝ^dim, mostly useful as a test target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardNormal {
    pub dim: usize,
    /// Constant added to the log-density (an unknown normaliser).
    pub shift: f64,
}

impl LogDensity for StandardNormal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prob_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut acc = 0.0;
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
            acc += v * v;
        }
        -0.5 * acc - 0.5 * self.dim as f64 * crate::LN_2PI + self.shift
    }
}

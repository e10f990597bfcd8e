//! Adam and piecewise-constant schedules.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update `θ ← θ − lr · m̂ / (√v̂ + ε)`.
    ///
    /// Non-finite gradients abort the step before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam tracks {} tensors, got {} grads",
                self.m.len(),
                grads.len()
            )));
        }
        for (g, m) in grads.iter().zip(&self.m) {
            if g.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: m.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite("gradient"));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((p, &g), (m, v)) in iter {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Value that starts at `initial` and jumps at listed iterations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Schedule {
    pub initial: f64,
    /// `(iteration, value)` pairs in increasing iteration order.
    pub steps: Vec<(usize, f64)>,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self {
            initial: value,
            steps: Vec::new(),
        }
    }

    /// Multiplies by `factor` at each fraction of `total` iterations.
    pub fn decay(initial: f64, total: usize, fractions: &[f64], factor: f64) -> Self {
        let mut value = initial;
        let steps = fractions
            .iter()
            .map(|f| {
                value *= factor;
                ((f * total as f64).round() as usize, value)
            })
            .collect();
        Self { initial, steps }
    }

    pub fn at(&self, iteration: usize) -> f64 {
        self.steps
            .iter()
            .take_while(|(i, _)| *i <= iteration)
            .last()
            .map(|&(_, v)| v)
            .unwrap_or(self.initial)
    }

    pub fn is_non_increasing(&self) -> bool {
        let mut prev = self.initial;
        self.steps.iter().all(|&(_, v)| {
            let ok = v <= prev;
            prev = v;
            ok
        })
    }

    pub fn is_sorted(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].0 <= w[1].0)
    }
}

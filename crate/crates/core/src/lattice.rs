//! XY and extended-XY (ring-exchange) models on an n×n periodic square lattice.
//!
//! Sites are indexed row-major, `site = row * n + col`. Each bond is the
//! right or down neighbour of exactly one site, and each elementary plaquette
//! is anchored at its top-left corner, so for `n >= 3` every bond and every
//! plaquette is enumerated once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{contract, invalid, Result};
use crate::target::LogDensity;

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta % TAU;
    let w = if r < 0.0 { r + TAU } else { r };
    // the shift can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// n×n grid of spin angles, each in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfig {
    n: usize,
    angles: Vec<f64>,
}

impl SpinConfig {
    /// Angles are wrapped into `[0, 2π)`.
    pub fn new(n: usize, angles: Vec<f64>) -> Result<Self> {
        if angles.len() != n * n {
            return Err(invalid(format!(
                "expected {} angles for a {n}x{n} lattice, got {}",
                n * n,
                angles.len()
            )));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(invalid("spin angles must be finite"));
        }
        Ok(Self {
            n,
            angles: angles.into_iter().map(wrap_angle).collect(),
        })
    }

    pub fn aligned(n: usize, angle: f64) -> Self {
        Self {
            n,
            angles: vec![wrap_angle(angle); n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angle(&self, row: usize, col: usize) -> f64 {
        self.angles[row * self.n + col]
    }

    pub fn set(&mut self, site: usize, angle: f64) {
        self.angles[site] = wrap_angle(angle);
    }

    pub fn into_angles(self) -> Vec<f64> {
        self.angles
    }
}

/// Temperature and couplings defining one Boltzmann target.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatticeCondition {
    pub temperature: f64,
    pub j: f64,
    /// Ring-exchange coupling; zero for the plain XY model.
    pub k: f64,
}

impl LatticeCondition {
    pub fn new(temperature: f64, j: f64, k: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(invalid(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { temperature, j, k })
    }

    pub fn xy(temperature: f64) -> Result<Self> {
        Self::new(temperature, 1.0, 0.0)
    }

    pub fn embedding(&self) -> Vec<f64> {
        vec![self.temperature]
    }
}

fn check_size(n: usize) -> Result<()> {
    if n < 3 {
        return Err(contract(format!("lattice side must be at least 3, got {n}")));
    }
    Ok(())
}

#[inline]
fn right(n: usize, s: usize) -> usize {
    let (r, c) = (s / n, s % n);
    r * n + (c + 1) % n
}

#[inline]
fn left(n: usize, s: usize) -> usize {
    let (r, c) = (s / n, s % n);
    r * n + (c + n - 1) % n
}

#[inline]
fn down(n: usize, s: usize) -> usize {
    (s + n) % (n * n)
}

#[inline]
fn up(n: usize, s: usize) -> usize {
    (s + n * n - n) % (n * n)
}

/// Corners (top-left, top-right, bottom-right, bottom-left) of the plaquette
/// anchored at `s`.
#[inline]
fn plaquette(n: usize, s: usize) -> [usize; 4] {
    let tr = right(n, s);
    [s, tr, down(n, tr), down(n, s)]
}

fn bond_sum(angles: &[f64], n: usize) -> f64 {
    (0..n * n)
        .map(|s| (angles[s] - angles[right(n, s)]).cos() + (angles[s] - angles[down(n, s)]).cos())
        .sum()
}

fn plaquette_sum(angles: &[f64], n: usize) -> f64 {
    (0..n * n)
        .map(|s| {
            let [i, j, k, l] = plaquette(n, s);
            (angles[i] - angles[j] + angles[k] - angles[l]).cos()
        })
        .sum()
}

fn energy_raw(angles: &[f64], n: usize, j: f64, k: f64) -> f64 {
    let mut e = -j * bond_sum(angles, n);
    if k != 0.0 {
        e -= k * plaquette_sum(angles, n);
    }
    e
}

/// `−J Σ_bonds cos(θᵢ − θⱼ)` with periodic boundaries.
pub fn xy_energy(s: &SpinConfig, j: f64) -> Result<f64> {
    check_size(s.n)?;
    Ok(-j * bond_sum(&s.angles, s.n))
}

/// XY energy minus `K Σ_plaquettes cos(θᵢ − θⱼ + θₖ − θₗ)`.
pub fn exy_energy(s: &SpinConfig, j: f64, k: f64) -> Result<f64> {
    check_size(s.n)?;
    Ok(energy_raw(&s.angles, s.n, j, k))
}

/// `−E(s)/T`; the partition function is never computed.
pub fn log_boltzmann_unnorm(s: &SpinConfig, c: &LatticeCondition) -> Result<f64> {
    Ok(-exy_energy(s, c.j, c.k)? / c.temperature)
}

/// Norm of the mean spin vector, in `[0, 1]`.
pub fn magnetization(s: &SpinConfig) -> f64 {
    let (mut cx, mut sy) = (0.0, 0.0);
    for a in &s.angles {
        cx += a.cos();
        sy += a.sin();
    }
    let n2 = s.angles.len().max(1) as f64;
    (cx / n2).hypot(sy / n2).min(1.0)
}

pub fn energy_per_site(s: &SpinConfig, j: f64, k: f64) -> Result<f64> {
    Ok(exy_energy(s, j, k)? / (s.n * s.n) as f64)
}

/// Energy and `∂E/∂θ` for raw (not necessarily wrapped) angles.
pub fn energy_and_gradient(angles: &[f64], n: usize, j: f64, k: f64, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut e = 0.0;
    for s in 0..n * n {
        for t in [right(n, s), down(n, s)] {
            let d = angles[s] - angles[t];
            e -= j * d.cos();
            let f = j * d.sin();
            grad[s] += f;
            grad[t] -= f;
        }
        if k != 0.0 {
            let [a, b, c, d] = plaquette(n, s);
            let phi = angles[a] - angles[b] + angles[c] - angles[d];
            e -= k * phi.cos();
            let f = k * phi.sin();
            grad[a] += f;
            grad[b] -= f;
            grad[c] += f;
            grad[d] -= f;
        }
    }
    e
}

/// Energy of every bond and plaquette touching `site`, with its angle set to `value`.
fn site_energy(angles: &[f64], n: usize, site: usize, value: f64, j: f64, k: f64) -> f64 {
    let mut e = 0.0;
    for nb in [right(n, site), left(n, site), down(n, site), up(n, site)] {
        e -= j * (value - angles[nb]).cos();
    }
    if k != 0.0 {
        let theta = |x: usize| if x == site { value } else { angles[x] };
        // the four plaquettes having `site` as a corner
        for anchor in [site, left(n, site), up(n, site), up(n, left(n, site))] {
            let [a, b, c, d] = plaquette(n, anchor);
            e -= k * (theta(a) - theta(b) + theta(c) - theta(d)).cos();
        }
    }
    e
}

/// Energy change from setting `site` to `value`, using only local terms.
pub fn local_energy_delta(s: &SpinConfig, site: usize, value: f64, j: f64, k: f64) -> f64 {
    let old = s.angles[site];
    site_energy(&s.angles, s.n, site, value, j, k) - site_energy(&s.angles, s.n, site, old, j, k)
}

/// Boltzmann factor `exp(−E/T)` as a [`LogDensity`] over raw angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoltzmannTarget {
    pub n: usize,
    pub condition: LatticeCondition,
}

impl BoltzmannTarget {
    pub fn new(n: usize, condition: LatticeCondition) -> Result<Self> {
        check_size(n)?;
        Ok(Self { n, condition })
    }
}

impl LogDensity for BoltzmannTarget {
    fn dim(&self) -> usize {
        self.n * self.n
    }

    fn log_prob(&self, x: &[f64]) -> f64 {
        -energy_raw(x, self.n, self.condition.j, self.condition.k) / self.condition.temperature
    }

    fn log_prob_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let c = self.condition;
        let e = energy_and_gradient(x, self.n, c.j, c.k, grad);
        let inv_t = 1.0 / c.temperature;
        grad.iter_mut().for_each(|g| *g *= -inv_t);
        -e * inv_t
    }
}

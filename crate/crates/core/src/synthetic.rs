//! Two-dimensional mixture targets: Gaussian mixtures (MOG-4, MOG-8) and
//! concentric rings (Rings-4).
//!
//! Ring densities are defined on (r, θ) with a Gaussian radial profile and a
//! uniform angle. Every density returned here is the *Cartesian* density, so
//! the ring log-density carries the `-ln r` term of the polar area element.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{domain, invalid, Result};
use crate::target::LogDensity;
use crate::LN_2PI;

/// One weighted bivariate Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    /// Row-major symmetric covariance.
    pub cov: [[f64; 2]; 2],
}

impl GaussianComponent {
    fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    fn precision(&self) -> [[f64; 2]; 2] {
        let d = self.det();
        [
            [self.cov[1][1] / d, -self.cov[0][1] / d],
            [-self.cov[1][0] / d, self.cov[0][0] / d],
        ]
    }

    /// `log N(x; μ, Σ)` and its gradient.
    fn log_pdf_grad(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let p = self.precision();
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let pd = [p[0][0] * d[0] + p[0][1] * d[1], p[1][0] * d[0] + p[1][1] * d[1]];
        let maha = d[0] * pd[0] + d[1] * pd[1];
        (-LN_2PI - 0.5 * self.det().ln() - 0.5 * maha, [-pd[0], -pd[1]])
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis2(&self, x: [f64; 2]) -> f64 {
        let p = self.precision();
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        d[0] * (p[0][0] * d[0] + p[0][1] * d[1]) + d[1] * (p[1][0] * d[0] + p[1][1] * d[1])
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        // Cholesky factor of the 2×2 covariance
        let l00 = self.cov[0][0].sqrt();
        let l10 = self.cov[1][0] / l00;
        let l11 = (self.cov[1][1] - l10 * l10).sqrt();
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        [self.mean[0] + l00 * z0, self.mean[1] + l10 * z0 + l11 * z1]
    }
}

/// Weighted Gaussian mixture in ℝ².
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MogParams {
    components: Vec<GaussianComponent>,
}

impl MogParams {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("mixture needs at least one component"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture weights sum to {total}, expected 1")));
        }
        for (i, c) in components.iter().enumerate() {
            let symmetric = (c.cov[0][1] - c.cov[1][0]).abs() <= 1e-12 * c.cov[0][1].abs().max(1.0);
            if c.weight <= 0.0 || c.cov[0][0] <= 0.0 || c.det() <= 0.0 || !symmetric {
                return Err(invalid(format!("component {i} has invalid weight or covariance")));
            }
        }
        Ok(Self { components })
    }

    /// Equal-weight isotropic components at `means` with variance `var`.
    pub fn isotropic(means: &[[f64; 2]], var: f64) -> Result<Self> {
        let w = 1.0 / means.len().max(1) as f64;
        Self::new(
            means
                .iter()
                .map(|&mean| GaussianComponent {
                    weight: w,
                    mean,
                    cov: [[var, 0.0], [0.0, var]],
                })
                .collect(),
        )
    }

    /// Four modes at (±2, ±2), Σ = 0.25·I.
    pub fn mog4() -> Self {
        Self::isotropic(&[[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]], 0.25)
            .expect("valid preset")
    }

    /// Eight modes on a circle of radius 3 at 45° spacing, Σ = 0.09·I.
    pub fn mog8() -> Self {
        let means: Vec<[f64; 2]> = (0..8)
            .map(|i| {
                let a = i as f64 * PI / 4.0;
                [3.0 * a.cos(), 3.0 * a.sin()]
            })
            .collect();
        Self::isotropic(&means, 0.09).expect("valid preset")
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }
}

/// Log-density of the full mixture, `log Σᵢ aᵢ N(x; μᵢ, Σᵢ)`, via log-sum-exp.
pub fn mog_log_density(x: [f64; 2], params: &MogParams) -> f64 {
    mog_log_density_grad(x, params).0
}

fn mog_log_density_grad(x: [f64; 2], params: &MogParams) -> (f64, [f64; 2]) {
    let terms: Vec<(f64, [f64; 2])> = params
        .components
        .iter()
        .map(|c| {
            let (lp, g) = c.log_pdf_grad(x);
            (c.weight.ln() + lp, g)
        })
        .collect();
    let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut grad = [0.0; 2];
    for (lp, g) in &terms {
        let w = (lp - max).exp();
        total += w;
        grad[0] += w * g[0];
        grad[1] += w * g[1];
    }
    (max + total.ln(), [grad[0] / total, grad[1] / total])
}

/// One ring: Gaussian radial profile around `radius`, uniform angle.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RingComponent {
    pub weight: f64,
    pub radius: f64,
    pub std: f64,
}

impl RingComponent {
    fn log_radial(&self, r: f64) -> (f64, f64) {
        let z = (r - self.radius) / self.std;
        let lp = -0.5 * z * z - self.std.ln() - 0.5 * LN_2PI;
        (lp, -z / self.std)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let r = loop {
            let z: f64 = StandardNormal.sample(rng);
            let r = self.radius + self.std * z;
            if r > 0.0 {
                break r;
            }
        };
        let a = rng.gen_range(0.0..2.0 * PI);
        [r * a.cos(), r * a.sin()]
    }
}

/// Concentric rings with strictly increasing radii.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RingsParams {
    rings: Vec<RingComponent>,
}

impl RingsParams {
    pub fn new(rings: Vec<RingComponent>) -> Result<Self> {
        if rings.is_empty() {
            return Err(invalid("need at least one ring"));
        }
        let total: f64 = rings.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("ring weights sum to {total}, expected 1")));
        }
        if rings.iter().any(|c| c.weight <= 0.0 || c.radius <= 0.0 || c.std <= 0.0) {
            return Err(invalid("ring weight, radius and std must be positive"));
        }
        if rings.windows(2).any(|w| w[1].radius <= w[0].radius) {
            return Err(invalid("ring radii must be strictly increasing"));
        }
        Ok(Self { rings })
    }

    /// Radii 1, 2, 3, 4 with σ = 0.1 and equal weights.
    pub fn rings4() -> Self {
        Self::new(
            (1..=4)
                .map(|r| RingComponent {
                    weight: 0.25,
                    radius: r as f64,
                    std: 0.1,
                })
                .collect(),
        )
        .expect("valid preset")
    }

    pub fn rings(&self) -> &[RingComponent] {
        &self.rings
    }
}

/// Cartesian log-density of the ring mixture. Singular at the origin.
pub fn rings_log_density_cartesian(x: [f64; 2], params: &RingsParams) -> Result<f64> {
    rings_log_density_grad(x, params).map(|(lp, _)| lp)
}

fn rings_log_density_grad(x: [f64; 2], params: &RingsParams) -> Result<(f64, [f64; 2])> {
    let r = x[0].hypot(x[1]);
    if r <= 0.0 {
        return Err(domain("rings_log_density", "density is singular at the origin"));
    }
    let terms: Vec<(f64, f64)> = params
        .rings
        .iter()
        .map(|c| {
            let (lp, d) = c.log_radial(r);
            (c.weight.ln() + lp, d)
        })
        .collect();
    let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let (mut total, mut dr) = (0.0, 0.0);
    for (lp, d) in &terms {
        let w = (lp - max).exp();
        total += w;
        dr += w * d;
    }
    let lp = max + total.ln() - LN_2PI - r.ln();
    let dlog_dr = dr / total - 1.0 / r;
    Ok((lp, [dlog_dr * x[0] / r, dlog_dr * x[1] / r]))
}

/// A point tagged with the mixture component that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labeled {
    pub x: [f64; 2],
    pub component: usize,
}

fn pick_component<R: Rng + ?Sized>(weights: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn sample_mog<R: Rng + ?Sized>(params: &MogParams, n: usize, rng: &mut R) -> Vec<Labeled> {
    (0..n)
        .map(|_| {
            let k = pick_component(params.components.iter().map(|c| c.weight), rng);
            Labeled {
                x: params.components[k].sample(rng),
                component: k,
            }
        })
        .collect()
}

pub fn sample_rings<R: Rng + ?Sized>(params: &RingsParams, n: usize, rng: &mut R) -> Vec<Labeled> {
    (0..n)
        .map(|_| {
            let k = pick_component(params.rings.iter().map(|c| c.weight), rng);
            Labeled {
                x: params.rings[k].sample(rng),
                component: k,
            }
        })
        .collect()
}

/// The value a synthetic model is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionValue {
    Mean([f64; 2]),
    Radius(f64),
}

/// Names one mixture component; the flow sees its mean or radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticCondition {
    pub value: ConditionValue,
    pub component: usize,
}

impl SyntheticCondition {
    pub fn embedding(&self) -> Vec<f64> {
        match self.value {
            ConditionValue::Mean(m) => vec![m[0], m[1]],
            ConditionValue::Radius(r) => vec![r],
        }
    }
}

/// One of the synthetic target families.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SyntheticDataset {
    Mog(MogParams),
    Rings(RingsParams),
}

impl SyntheticDataset {
    pub fn num_components(&self) -> usize {
        match self {
            SyntheticDataset::Mog(p) => p.components.len(),
            SyntheticDataset::Rings(p) => p.rings.len(),
        }
    }

    pub fn condition_dim(&self) -> usize {
        match self {
            SyntheticDataset::Mog(_) => 2,
            SyntheticDataset::Rings(_) => 1,
        }
    }

    pub fn condition(&self, component: usize) -> Result<SyntheticCondition> {
        let value = match self {
            SyntheticDataset::Mog(p) => ConditionValue::Mean(
                p.components
                    .get(component)
                    .ok_or_else(|| invalid(format!("no component {component}")))?
                    .mean,
            ),
            SyntheticDataset::Rings(p) => ConditionValue::Radius(
                p.rings
                    .get(component)
                    .ok_or_else(|| invalid(format!("no ring {component}")))?
                    .radius,
            ),
        };
        Ok(SyntheticCondition { value, component })
    }

    pub fn conditions(&self) -> Vec<SyntheticCondition> {
        (0..self.num_components())
            .map(|i| self.condition(i).expect("index in range"))
            .collect()
    }

    /// Log-density of the whole mixture.
    pub fn log_density(&self, x: [f64; 2]) -> Result<f64> {
        match self {
            SyntheticDataset::Mog(p) => Ok(mog_log_density(x, p)),
            SyntheticDataset::Rings(p) => rings_log_density_cartesian(x, p),
        }
    }

    /// `n` i.i.d. draws from the component named by `c`.
    pub fn sample_component<R: Rng + ?Sized>(
        &self,
        c: &SyntheticCondition,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<[f64; 2]>> {
        self.condition(c.component)?;
        Ok(match self {
            SyntheticDataset::Mog(p) => {
                let comp = p.components[c.component];
                (0..n).map(|_| comp.sample(rng)).collect()
            }
            SyntheticDataset::Rings(p) => {
                let ring = p.rings[c.component];
                (0..n).map(|_| ring.sample(rng)).collect()
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Labeled> {
        match self {
            SyntheticDataset::Mog(p) => sample_mog(p, n, rng),
            SyntheticDataset::Rings(p) => sample_rings(p, n, rng),
        }
    }

    /// Target restricted to the component named by `c` (normalised).
    pub fn component_target(&self, c: &SyntheticCondition) -> Result<SyntheticTarget> {
        self.condition(c.component)?;
        let single = match self {
            SyntheticDataset::Mog(p) => {
                let mut comp = p.components[c.component];
                comp.weight = 1.0;
                SyntheticDataset::Mog(MogParams::new(vec![comp])?)
            }
            SyntheticDataset::Rings(p) => {
                let mut ring = p.rings[c.component];
                ring.weight = 1.0;
                SyntheticDataset::Rings(RingsParams::new(vec![ring])?)
            }
        };
        Ok(SyntheticTarget(single))
    }

    /// Target equal to the whole mixture, whatever the condition.
    pub fn mixture_target(&self) -> SyntheticTarget {
        SyntheticTarget(self.clone())
    }

    /// Fraction of `points` lying within 3σ of each mode (Mahalanobis radius 3
    /// for Gaussians, a ±3σ radial band for rings).
    pub fn mode_occupancy(&self, points: &[[f64; 2]]) -> Vec<f64> {
        let n = points.len().max(1) as f64;
        match self {
            SyntheticDataset::Mog(p) => p
                .components
                .iter()
                .map(|c| points.iter().filter(|&&x| c.mahalanobis2(x) < 9.0).count() as f64 / n)
                .collect(),
            SyntheticDataset::Rings(p) => p
                .rings
                .iter()
                .map(|c| {
                    points
                        .iter()
                        .filter(|x| (x[0].hypot(x[1]) - c.radius).abs() < 3.0 * c.std)
                        .count() as f64
                        / n
                })
                .collect(),
        }
    }
}

/// `log p(x; c)` for the single component selected by `c`.
pub fn conditional_log_density(
    x: [f64; 2],
    c: &SyntheticCondition,
    dataset: &SyntheticDataset,
) -> Result<f64> {
    dataset.component_target(c)?.0.log_density(x)
}

/// A synthetic dataset viewed as a [`LogDensity`] on ℝ².
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTarget(pub SyntheticDataset);

impl LogDensity for SyntheticTarget {
    fn dim(&self) -> usize {
        2
    }

    fn log_prob_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let p = [x[0], x[1]];
        let (lp, g) = match &self.0 {
            SyntheticDataset::Mog(m) => mog_log_density_grad(p, m),
            SyntheticDataset::Rings(r) => rings_log_density_grad(p, r).unwrap_or((f64::NAN, [0.0; 2])),
        };
        grad[..2].copy_from_slice(&g);
        lp
    }
}

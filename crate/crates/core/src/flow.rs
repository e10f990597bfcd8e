//! Conditional normalizing flow: stacked affine coupling layers, an optional
//! projection between the circle and the real line, and a simple base density.
//!
//! Direction convention: `forward` maps base space to data space
//! (`z → x`), `inverse` maps data to base.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Graph, UnaryFn, Var};
use crate::error::{domain, invalid, Error, Result};
use crate::lattice::wrap_angle;
use crate::nn::{Bound, Init, Linear, Mlp, ParamStore};
use crate::tensor::Tensor;

/// Default regulariser keeping projected angles away from the singular ends.
pub const DEFAULT_ALPHA: f64 = 1e-4;

/// Map between angles in `[0, 2π)` and the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Projection {
    None,
    Sigmoid { alpha: f64 },
    Tan { alpha: f64 },
}

impl Projection {
    pub fn alpha(&self) -> Option<f64> {
        match *self {
            Projection::None => None,
            Projection::Sigmoid { alpha } | Projection::Tan { alpha } => Some(alpha),
        }
    }

    fn validate(&self) -> Result<()> {
        match self.alpha() {
            Some(a) if !(a > 0.0 && a < 0.5) => Err(invalid(format!("alpha must lie in (0, 0.5), got {a}"))),
            _ => Ok(()),
        }
    }
}

/// Base density of the flow.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Base {
    /// Standard normal on ℝ^D.
    Normal,
    /// Uniform on the box `[low, high]^D`.
    Uniform { low: f64, high: f64 },
}

/// How coupling masks alternate through the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum MaskKind {
    /// Even and odd coordinates take turns.
    Alternating,
    /// Checkerboard over an `n × n` lattice, parity flipping per layer.
    Checkerboard { n: usize },
}

impl MaskKind {
    /// `true` marks coordinates passed through unchanged (and fed to the conditioner).
    pub fn mask(&self, dim: usize, layer: usize) -> Vec<bool> {
        let parity = layer % 2;
        (0..dim)
            .map(|i| {
                let colour = match *self {
                    MaskKind::Alternating => i % 2,
                    MaskKind::Checkerboard { n } => (i / n + i % n) % 2,
                };
                colour == parity
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowConfig {
    pub dim: usize,
    pub cond_dim: usize,
    pub n_layers: usize,
    /// Hidden widths of each conditioner trunk.
    pub hidden: Vec<usize>,
    pub masks: MaskKind,
    pub base: Base,
    pub projection: Projection,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(invalid("flow dimension must be at least 2"));
        }
        if self.n_layers == 0 {
            return Err(invalid("flow needs at least one coupling layer"));
        }
        if let MaskKind::Checkerboard { n } = self.masks {
            if n * n != self.dim {
                return Err(invalid(format!("checkerboard side {n} does not match dimension {}", self.dim)));
            }
        }
        for l in 0..self.n_layers.min(2) {
            let m = self.masks.mask(self.dim, l);
            if m.iter().all(|&b| b) || m.iter().all(|&b| !b) {
                return Err(invalid("every mask needs both fixed and free coordinates"));
            }
        }
        if let Base::Uniform { low, high } = self.base {
            if !(low < high) || !low.is_finite() || !high.is_finite() {
                return Err(invalid("uniform base needs finite low < high"));
            }
        }
        self.projection.validate()
    }
}

/// One conditional affine coupling layer.
///
/// Free coordinates become `u · exp(s) + t` where `s = tanh(head_s(h))`,
/// `t = head_t(h)` and `h` is a ReLU trunk applied to the fixed coordinates
/// concatenated with the condition vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub mask: Vec<bool>,
    fixed: Vec<usize>,
    free: Vec<usize>,
    trunk: Mlp,
    scale: Linear,
    shift: Linear,
}

impl CouplingLayer {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        mask: Vec<bool>,
        cond_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let fixed: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let free: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
        let mut widths = vec![fixed.len() + cond_dim];
        widths.extend_from_slice(hidden);
        let trunk = Mlp::new(store, &format!("{name}.trunk"), &widths, UnaryFn::Relu, true, rng);
        let h = *widths.last().unwrap();
        let scale = Linear::new(store, &format!("{name}.scale"), h, free.len(), Init::Zeros, rng);
        let shift = Linear::new(store, &format!("{name}.shift"), h, free.len(), Init::Zeros, rng);
        Self {
            mask,
            fixed,
            free,
            trunk,
            scale,
            shift,
        }
    }

    fn conditioner(&self, g: &mut Graph, p: &Bound, x: Var, cond: Var) -> Result<(Var, Var, Var)> {
        let fixed = g.gather(x, &self.fixed)?;
        let input = g.concat(&[fixed, cond], 1)?;
        let h = self.trunk.forward(g, p, input)?;
        let s_raw = self.scale.forward(g, p, h)?;
        let s = g.tanh(s_raw)?;
        let t = self.shift.forward(g, p, h)?;
        Ok((fixed, s, t))
    }

    fn assemble(&self, g: &mut Graph, fixed: Var, free: Var) -> Result<Var> {
        let d = self.mask.len();
        let a = g.scatter(fixed, &self.fixed, d)?;
        let b = g.scatter(free, &self.free, d)?;
        g.add(a, b)
    }

    /// `z → x` on a `[B, D]` batch; returns `x` and the per-row log-determinant.
    pub fn forward(&self, g: &mut Graph, p: &Bound, z: Var, cond: Var) -> Result<(Var, Var)> {
        let (fixed, s, t) = self.conditioner(g, p, z, cond)?;
        let u = g.gather(z, &self.free)?;
        let es = g.exp(s)?;
        let scaled = g.mul(u, es)?;
        let y = g.add(scaled, t)?;
        let x = self.assemble(g, fixed, y)?;
        let ld = g.sum(s, &[1])?;
        Ok((x, ld))
    }

    /// `x → z`, the exact algebraic inverse of [`CouplingLayer::forward`].
    pub fn inverse(&self, g: &mut Graph, p: &Bound, x: Var, cond: Var) -> Result<(Var, Var)> {
        let (fixed, s, t) = self.conditioner(g, p, x, cond)?;
        let y = g.gather(x, &self.free)?;
        let centred = g.sub(y, t)?;
        let neg_s = g.neg(s)?;
        let ens = g.exp(neg_s)?;
        let u = g.mul(centred, ens)?;
        let z = self.assemble(g, fixed, u)?;
        let ld = g.sum(neg_s, &[1])?;
        Ok((z, ld))
    }
}

/// Samples in data space with the model log-density of each.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSamples {
    /// `[n, D]`; angles are wrapped into `[0, 2π)` when a projection is set.
    pub x: Tensor,
    /// Log-density at the pre-wrap point.
    pub log_q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    config: FlowConfig,
    params: ParamStore,
    layers: Vec<CouplingLayer>,
}

impl FlowModel {
    /// Builds a stack that starts as the identity map.
    pub fn new<R: Rng + ?Sized>(config: FlowConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layers = (0..config.n_layers)
            .map(|l| {
                let mask = config.masks.mask(config.dim, l);
                CouplingLayer::new(&mut params, &format!("layer{l}"), mask, config.cond_dim, &config.hidden, rng)
            })
            .collect();
        Ok(Self { config, params, layers })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Repeats one condition vector into a `[rows, cond_dim]` tensor.
    pub fn cond_batch(&self, cond: &[f64], rows: usize) -> Result<Tensor> {
        if cond.len() != self.config.cond_dim {
            return Err(Error::Shape {
                op: "condition",
                lhs: vec![self.config.cond_dim],
                rhs: vec![cond.len()],
            });
        }
        let data = (0..rows).flat_map(|_| cond.iter().copied()).collect();
        Tensor::new(vec![rows, cond.len()], data)
    }

    fn check_batch(&self, g: &Graph, x: Var, cond: Var) -> Result<usize> {
        let xs = g.shape(x);
        let cs = g.shape(cond);
        if xs.len() != 2 || xs[1] != self.config.dim || cs.len() != 2 || cs[1] != self.config.cond_dim || cs[0] != xs[0] {
            return Err(Error::Shape {
                op: "flow",
                lhs: xs.to_vec(),
                rhs: cs.to_vec(),
            });
        }
        Ok(xs[0])
    }

    /// Base-space `[B, D]` to flow output on ℝ^D, with summed log-determinants.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, z: Var, cond: Var) -> Result<(Var, Var)> {
        self.check_batch(g, z, cond)?;
        let mut x = z;
        let mut total: Option<Var> = None;
        for layer in &self.layers {
            let (y, ld) = layer.forward(g, p, x, cond)?;
            x = y;
            total = Some(match total {
                Some(t) => g.add(t, ld)?,
                None => ld,
            });
        }
        Ok((x, total.expect("at least one layer")))
    }

    /// Inverse of [`FlowModel::forward_graph`].
    pub fn inverse_graph(&self, g: &mut Graph, p: &Bound, x: Var, cond: Var) -> Result<(Var, Var)> {
        self.check_batch(g, x, cond)?;
        let mut z = x;
        let mut total: Option<Var> = None;
        for layer in self.layers.iter().rev() {
            let (y, ld) = layer.inverse(g, p, z, cond)?;
            z = y;
            total = Some(match total {
                Some(t) => g.add(t, ld)?,
                None => ld,
            });
        }
        Ok((z, total.expect("at least one layer")))
    }

    fn base_log_prob_graph(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let d = self.config.dim as f64;
        match self.config.base {
            Base::Normal => {
                let sq = g.square(z)?;
                let s = g.sum(sq, &[1])?;
                let h = g.scale(s, -0.5)?;
                g.offset(h, -0.5 * d * crate::LN_2PI)
            }
            Base::Uniform { low, high } => {
                if g.value(z).data().iter().any(|&v| v < low || v > high) {
                    return Err(domain("uniform_base", "point outside the base support"));
                }
                let zero = g.sum(z, &[1])?;
                let zero = g.scale(zero, 0.0)?;
                g.offset(zero, -d * (high - low).ln())
            }
        }
    }

    /// Data angles to ℝ^D plus the per-row `log |dy/dθ|`.
    fn project_graph(&self, g: &mut Graph, x: Var) -> Result<(Var, Option<Var>)> {
        let alpha = match self.config.projection.alpha() {
            None => return Ok((x, None)),
            Some(a) => a,
        };
        if let Some(v) = g.value(x).data().iter().find(|&&v| !(0.0..TAU).contains(&v)) {
            return Err(domain("projection", format!("angle {v} outside [0, 2pi)")));
        }
        match self.config.projection {
            Projection::Sigmoid { .. } => {
                let u = g.scale(x, (1.0 - 2.0 * alpha) / TAU)?;
                let u = g.offset(u, alpha)?;
                let log_u = g.log(u)?;
                let one_minus = g.neg(u)?;
                let one_minus = g.offset(one_minus, 1.0)?;
                let log_1mu = g.log(one_minus)?;
                let y = g.sub(log_u, log_1mu)?;
                let both = g.add(log_u, log_1mu)?;
                let s = g.sum(both, &[1])?;
                let s = g.neg(s)?;
                let ld = g.offset(s, self.config.dim as f64 * ((1.0 - 2.0 * alpha) / TAU).ln())?;
                Ok((y, Some(ld)))
            }
            Projection::Tan { .. } => {
                let c = (1.0 - 2.0 * alpha) / 4.0;
                let a = g.scale(x, c)?;
                let a = g.offset(a, alpha)?;
                let sn = g.unary(UnaryFn::Sin, a)?;
                let cs = g.unary(UnaryFn::Cos, a)?;
                let y = g.div(sn, cs)?;
                // dy/dθ = c / cos²
                let lc = g.unary(UnaryFn::Square, cs)?;
                let lc = g.log(lc)?;
                let s = g.sum(lc, &[1])?;
                let s = g.neg(s)?;
                let ld = g.offset(s, self.config.dim as f64 * c.ln())?;
                Ok((y, Some(ld)))
            }
            Projection::None => unreachable!(),
        }
    }

    /// ℝ^D to (unwrapped) angles plus the per-row `log |dy/dθ|` at that point.
    fn unproject_graph(&self, g: &mut Graph, y: Var) -> Result<(Var, Option<Var>)> {
        let alpha = match self.config.projection.alpha() {
            None => return Ok((y, None)),
            Some(a) => a,
        };
        match self.config.projection {
            Projection::Sigmoid { .. } => {
                let sg = g.sigmoid(y)?;
                let th = g.offset(sg, -alpha)?;
                let th = g.scale(th, TAU / (1.0 - 2.0 * alpha))?;
                let ls = g.log_sigmoid(y)?;
                let ny = g.neg(y)?;
                let lns = g.log_sigmoid(ny)?;
                let both = g.add(ls, lns)?;
                let s = g.sum(both, &[1])?;
                let s = g.neg(s)?;
                let ld = g.offset(s, self.config.dim as f64 * ((1.0 - 2.0 * alpha) / TAU).ln())?;
                Ok((th, Some(ld)))
            }
            Projection::Tan { .. } => {
                let c = (1.0 - 2.0 * alpha) / 4.0;
                let at = g.unary(UnaryFn::Atan, y)?;
                let th = g.offset(at, -alpha)?;
                let th = g.scale(th, 1.0 / c)?;
                // dy/dθ = c (1 + y²)
                let sq = g.square(y)?;
                let sq = g.offset(sq, 1.0)?;
                let l = g.log(sq)?;
                let s = g.sum(l, &[1])?;
                let ld = g.offset(s, self.config.dim as f64 * c.ln())?;
                Ok((th, Some(ld)))
            }
            Projection::None => unreachable!(),
        }
    }

    /// Differentiable `log q(x | c)` per row for data-space `x`.
    pub fn log_prob_graph(&self, g: &mut Graph, p: &Bound, x: Var, cond: Var) -> Result<Var> {
        self.check_batch(g, x, cond)?;
        let (y, proj_ld) = self.project_graph(g, x)?;
        let (z, ld) = self.inverse_graph(g, p, y, cond)?;
        let base = self.base_log_prob_graph(g, z)?;
        let mut out = g.add(base, ld)?;
        if let Some(pl) = proj_ld {
            out = g.add(out, pl)?;
        }
        Ok(out)
    }

    /// Pushes base draws `z` through the flow. Returns unwrapped data-space
    /// points and their log-density, both differentiable.
    pub fn sample_graph(&self, g: &mut Graph, p: &Bound, z: Var, cond: Var) -> Result<(Var, Var)> {
        let base = self.base_log_prob_graph(g, z)?;
        let (y, ld) = self.forward_graph(g, p, z, cond)?;
        let mut log_q = g.sub(base, ld)?;
        let (x, proj_ld) = self.unproject_graph(g, y)?;
        if let Some(pl) = proj_ld {
            log_q = g.add(log_q, pl)?;
        }
        Ok((x, log_q))
    }

    /// `[n, D]` draws from the base density.
    pub fn sample_base<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        let d = self.config.dim;
        let data = match self.config.base {
            Base::Normal => (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            Base::Uniform { low, high } => (0..n * d).map(|_| rng.gen_range(low..high)).collect(),
        };
        Tensor::new(vec![n, d], data).expect("base sample shape")
    }

    /// Non-differentiable `log q(x | c)` for a `[B, D]` batch and a `[B, cond_dim]` condition.
    pub fn log_prob(&self, x: &Tensor, cond: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let cv = g.constant(cond.clone());
        let lp = self.log_prob_graph(&mut g, &p, xv, cv)?;
        Ok(g.value(lp).data().to_vec())
    }

    /// `n` samples under one condition vector.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, cond: &[f64], rng: &mut R) -> Result<FlowSamples> {
        let cond = self.cond_batch(cond, n)?;
        let z = self.sample_base(n, rng);
        self.sample_from_base(&z, &cond)
    }

    /// Deterministic part of [`FlowModel::sample`] for given base draws.
    pub fn sample_from_base(&self, z: &Tensor, cond: &Tensor) -> Result<FlowSamples> {
        if z.rows() == 0 {
            return Ok(FlowSamples {
                x: Tensor::zeros(&[0, self.config.dim]),
                log_q: Vec::new(),
            });
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let cv = g.constant(cond.clone());
        let (x, log_q) = self.sample_graph(&mut g, &p, zv, cv)?;
        let mut x = g.value(x).clone();
        if self.config.projection != Projection::None {
            x.data_mut().iter_mut().for_each(|v| *v = wrap_angle(*v));
        }
        Ok(FlowSamples {
            x,
            log_q: g.value(log_q).data().to_vec(),
        })
    }

    /// One coupling layer applied forward outside any training graph.
    pub fn coupling_forward(&self, layer: usize, z: &Tensor, cond: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.run_layer(layer, z, cond, true)
    }

    pub fn coupling_inverse(&self, layer: usize, x: &Tensor, cond: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.run_layer(layer, x, cond, false)
    }

    fn run_layer(&self, layer: usize, x: &Tensor, cond: &Tensor, forward: bool) -> Result<(Tensor, Vec<f64>)> {
        let l = self
            .layers
            .get(layer)
            .ok_or_else(|| invalid(format!("no coupling layer {layer}")))?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let cv = g.constant(cond.clone());
        self.check_batch(&g, xv, cv)?;
        let (y, ld) = if forward {
            l.forward(&mut g, &p, xv, cv)?
        } else {
            l.inverse(&mut g, &p, xv, cv)?
        };
        Ok((g.value(y).clone(), g.value(ld).data().to_vec()))
    }

    /// Whole-stack forward map on ℝ^D without projection.
    pub fn forward(&self, z: &Tensor, cond: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.run_stack(z, cond, true)
    }

    pub fn inverse(&self, x: &Tensor, cond: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.run_stack(x, cond, false)
    }

    fn run_stack(&self, x: &Tensor, cond: &Tensor, forward: bool) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let cv = g.constant(cond.clone());
        let (y, ld) = if forward {
            self.forward_graph(&mut g, &p, xv, cv)?
        } else {
            self.inverse_graph(&mut g, &p, xv, cv)?
        };
        Ok((g.value(y).clone(), g.value(ld).data().to_vec()))
    }

    /// Short human-readable architecture summary.
    pub fn describe(&self) -> String {
        format!(
            "{} coupling layers, dim {}, cond {}, hidden {:?}, {} parameters",
            self.config.n_layers,
            self.config.dim,
            self.config.cond_dim,
            self.config.hidden,
            self.params.num_scalars()
        )
    }
}

/// `θ ↦ logit(α + (1 − 2α) θ / 2π)` with `log |dx/dθ|`.
pub fn project_sigmoid(theta: f64, alpha: f64) -> Result<(f64, f64)> {
    check_angle(theta, alpha, "project_sigmoid")?;
    let c = (1.0 - 2.0 * alpha) / TAU;
    let u = alpha + c * theta;
    Ok(((u / (1.0 - u)).ln(), c.ln() - u.ln() - (1.0 - u).ln()))
}

/// Inverse of [`project_sigmoid`]; fails if the image is not in `[0, 2π)`.
pub fn project_sigmoid_inverse(x: f64, alpha: f64) -> Result<f64> {
    let theta = (crate::autograd::sigmoid(x) - alpha) * TAU / (1.0 - 2.0 * alpha);
    check_image(theta, x, "project_sigmoid_inverse")
}

/// `θ ↦ tan(α + (1 − 2α) θ / 4)` with `log |dx/dθ|`.
pub fn project_tan(theta: f64, alpha: f64) -> Result<(f64, f64)> {
    check_angle(theta, alpha, "project_tan")?;
    let c = (1.0 - 2.0 * alpha) / 4.0;
    let a = alpha + c * theta;
    let cs = a.cos();
    Ok((a.tan(), c.ln() - 2.0 * cs.abs().ln()))
}

/// Inverse of [`project_tan`]; inputs below `tan(α)` are unreachable.
pub fn project_tan_inverse(x: f64, alpha: f64) -> Result<f64> {
    if x < alpha.tan() {
        return Err(domain("project_tan_inverse", format!("{x} is below tan(alpha)")));
    }
    let theta = (x.atan() - alpha) * 4.0 / (1.0 - 2.0 * alpha);
    check_image(theta, x, "project_tan_inverse")
}

fn check_angle(theta: f64, alpha: f64, op: &'static str) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    if !(0.0..TAU).contains(&theta) {
        return Err(domain(op, format!("angle {theta} outside [0, 2pi)")));
    }
    Ok(())
}

fn check_image(theta: f64, x: f64, op: &'static str) -> Result<f64> {
    // tolerate rounding right at the lower edge
    let theta = if theta < 0.0 && theta > -1e-12 { 0.0 } else { theta };
    if !(0.0..TAU).contains(&theta) {
        return Err(domain(op, format!("{x} maps outside [0, 2pi)")));
    }
    Ok(theta)
}

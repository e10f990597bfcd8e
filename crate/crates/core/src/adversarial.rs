//! Discriminator and the forward-KL, reverse-KL and adversarial loss terms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::autograd::{Graph, UnaryFn, Var};
use crate::error::{contract, domain, invalid, Result};
use crate::flow::FlowModel;
use crate::nn::{Bound, Mlp, ParamStore};
use crate::target::LogDensity;
use crate::tensor::Tensor;

/// Logits are clamped to this magnitude so BCE terms stay finite.
pub const LOGIT_CLAMP: f64 = 30.0;

/// How samples are presented to the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DiscInput {
    /// Coordinates as they are.
    Raw,
    /// Each coordinate is an angle, fed as `(cos θ, sin θ)`.
    Angles,
}

/// Binary classifier `D(x; c) ∈ (0, 1)` separating data from flow samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    params: ParamStore,
    mlp: Mlp,
    input: DiscInput,
    dim: usize,
    cond_dim: usize,
}

impl Discriminator {
    /// ReLU MLP with the given hidden widths and a single linear output.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        input: DiscInput,
        rng: &mut R,
    ) -> Self {
        let features = match input {
            DiscInput::Raw => dim,
            DiscInput::Angles => 2 * dim,
        };
        let mut widths = vec![features + cond_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mut params = ParamStore::new();
        let mlp = Mlp::new(&mut params, "disc", &widths, UnaryFn::Relu, false, rng);
        Self {
            params,
            mlp,
            input,
            dim,
            cond_dim,
        }
    }

    /// Four layers of 64, one of 8, then the output, on raw coordinates.
    pub fn synthetic<R: Rng + ?Sized>(dim: usize, cond_dim: usize, rng: &mut R) -> Self {
        Self::new(dim, cond_dim, &[64, 64, 64, 64, 8], DiscInput::Raw, rng)
    }

    /// Widths 256, 128, 64 over `(cos θ, sin θ)` site features.
    pub fn lattice<R: Rng + ?Sized>(sites: usize, cond_dim: usize, rng: &mut R) -> Self {
        Self::new(sites, cond_dim, &[256, 128, 64], DiscInput::Angles, rng)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input(&self) -> DiscInput {
        self.input
    }

    pub fn hidden(&self) -> Vec<usize> {
        let n = self.mlp.layers.len();
        self.mlp.layers[..n - 1].iter().map(|l| l.out_dim).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    /// Clamped logits, shape `[B]`.
    pub fn logits_graph(&self, g: &mut Graph, p: &Bound, x: Var, cond: Var) -> Result<Var> {
        let feats = match self.input {
            DiscInput::Raw => x,
            DiscInput::Angles => {
                let c = g.unary(UnaryFn::Cos, x)?;
                let s = g.unary(UnaryFn::Sin, x)?;
                g.concat(&[c, s], 1)?
            }
        };
        let input = g.concat(&[feats, cond], 1)?;
        let out = self.mlp.forward(g, p, input)?;
        let logit = g.sum(out, &[1])?;
        g.clamp(logit, -LOGIT_CLAMP, LOGIT_CLAMP)
    }

    /// `D(x; c)` for each row of a `[B, dim]` batch.
    pub fn prob(&self, x: &Tensor, cond: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let cv = g.constant(cond.clone());
        let l = self.logits_graph(&mut g, &p, xv, cv)?;
        Ok(g.value(l).data().iter().map(|&v| crate::autograd::sigmoid(v)).collect())
    }
}

/// Weights of the adversarial, reverse-KL and forward-KL terms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LossWeights {
    pub const fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            lambda3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid(format!("loss weights must be finite and nonnegative: {all:?}")));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(contract("all loss weights are zero"));
        }
        Ok(())
    }

    pub fn with_lambda1(self, lambda1: f64) -> Self {
        Self { lambda1, ..self }
    }
}

/// `−mean log q(x | c)` over a data batch.
pub fn fkl_loss(model: &FlowModel, g: &mut Graph, p: &Bound, batch: Var, cond: Var) -> Result<Var> {
    if g.shape(batch).first().copied().unwrap_or(0) == 0 {
        return Err(invalid("forward KL needs a nonempty batch"));
    }
    let lp = model.log_prob_graph(g, p, batch, cond)?;
    let m = g.mean_all(lp)?;
    g.neg(m)
}

/// Flow samples kept attached to the graph.
#[derive(Debug, Clone, Copy)]
pub struct Drawn {
    /// Data-space points (angles not wrapped), `[m, D]`.
    pub x: Var,
    /// `log q` of each, `[m]`.
    pub log_q: Var,
}

/// Pushes fixed base draws through the flow.
pub fn draw(model: &FlowModel, g: &mut Graph, p: &Bound, z: &Tensor, cond: Var) -> Result<Drawn> {
    let zv = g.constant(z.clone());
    let (x, log_q) = model.sample_graph(g, p, zv, cond)?;
    Ok(Drawn { x, log_q })
}

/// Reverse-KL estimate and how many draws the target could not score.
#[derive(Debug, Clone, Copy)]
pub struct RklTerm {
    pub loss: Var,
    pub excluded: usize,
}

/// Largest fraction of draws that may be excluded before the loss fails.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.1;

/// `mean(log q(x) − log p(x))` over flow draws, with pathwise gradients.
///
/// Draws where the target is not finite are left out of the mean.
pub fn rkl_loss<T: LogDensity + ?Sized>(g: &mut Graph, drawn: Drawn, target: &T) -> Result<RklTerm> {
    let x = g.value(drawn.x).clone();
    let (rows, d) = (x.rows(), x.last_dim());
    if rows == 0 {
        return Err(invalid("reverse KL needs at least one draw"));
    }
    let mut values = vec![0.0; rows];
    let mut grads = vec![0.0; rows * d];
    let mut weights = vec![0.0; rows];
    let mut excluded = 0;
    for r in 0..rows {
        let gr = &mut grads[r * d..(r + 1) * d];
        let v = target.log_prob_grad(x.row(r), gr);
        if v.is_finite() && gr.iter().all(|g| g.is_finite()) {
            values[r] = v;
            weights[r] = 1.0;
        } else {
            gr.iter_mut().for_each(|g| *g = 0.0);
            excluded += 1;
        }
    }
    if excluded as f64 > MAX_EXCLUDED_FRACTION * rows as f64 {
        return Err(domain(
            "rkl_loss",
            format!("target undefined on {excluded} of {rows} draws"),
        ));
    }
    let kept = (rows - excluded) as f64;
    weights.iter_mut().for_each(|w| *w /= kept);
    let lp = g.row_fn(drawn.x, values, Tensor::new(vec![rows, d], grads)?)?;
    let diff = g.sub(drawn.log_q, lp)?;
    let w = g.constant(Tensor::vector(weights));
    let weighted = g.mul(diff, w)?;
    let loss = g.sum_all(weighted)?;
    Ok(RklTerm { loss, excluded })
}

/// `−mean log D(real) − mean log(1 − D(fake))`.
pub fn adv_loss(
    disc: &Discriminator,
    g: &mut Graph,
    p: &Bound,
    real: Var,
    fake: Var,
    cond_real: Var,
    cond_fake: Var,
) -> Result<Var> {
    if g.shape(real)[0] == 0 || g.shape(fake)[0] == 0 {
        return Err(invalid("adversarial loss needs nonempty batches"));
    }
    let lr = disc.logits_graph(g, p, real, cond_real)?;
    let lf = disc.logits_graph(g, p, fake, cond_fake)?;
    let a = g.log_sigmoid(lr)?;
    let a = g.mean_all(a)?;
    let nf = g.neg(lf)?;
    let b = g.log_sigmoid(nf)?;
    let b = g.mean_all(b)?;
    let s = g.add(a, b)?;
    g.neg(s)
}

/// Inputs needed by [`objective`] for one single-condition minibatch.
pub struct ObjectiveInputs<'a, T: LogDensity + ?Sized> {
    pub model: &'a FlowModel,
    pub model_params: &'a Bound,
    pub disc: Option<(&'a Discriminator, &'a Bound)>,
    /// Data batch `[m, D]`, needed when λ₁ or λ₃ is positive.
    pub real: Option<&'a Tensor>,
    /// Base draws `[m, D]`, needed when λ₁ or λ₂ is positive.
    pub z: Option<&'a Tensor>,
    pub target: Option<&'a T>,
    pub cond: &'a [f64],
}

/// Every evaluated term; absent terms had zero weight.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveTerms {
    pub total: Var,
    pub fkl: Option<Var>,
    pub rkl: Option<Var>,
    pub adv: Option<Var>,
    pub excluded: usize,
}

/// `O = −λ₁ L_adv + λ₂ L_rkl + λ₃ L_fkl`; zero-weight terms are skipped.
pub fn objective<T: LogDensity + ?Sized>(
    g: &mut Graph,
    w: LossWeights,
    inp: &ObjectiveInputs<'_, T>,
) -> Result<ObjectiveTerms> {
    w.validate()?;
    let need = |what: &str| contract(format!("objective term needs {what}"));
    let model = inp.model;
    let p = inp.model_params;

    let mut fkl = None;
    let mut cond_real = None;
    if w.lambda3 > 0.0 || w.lambda1 > 0.0 {
        let real = inp.real.ok_or_else(|| need("a data batch"))?;
        let rv = g.constant(real.clone());
        let cv = g.constant(model.cond_batch(inp.cond, real.rows())?);
        cond_real = Some((rv, cv));
        if w.lambda3 > 0.0 {
            fkl = Some(fkl_loss(model, g, p, rv, cv)?);
        }
    }

    let mut drawn = None;
    let mut cond_fake = None;
    if w.lambda1 > 0.0 || w.lambda2 > 0.0 {
        let z = inp.z.ok_or_else(|| need("base draws"))?;
        let cv = g.constant(model.cond_batch(inp.cond, z.rows())?);
        cond_fake = Some(cv);
        drawn = Some(draw(model, g, p, z, cv)?);
    }

    let mut rkl = None;
    let mut excluded = 0;
    if w.lambda2 > 0.0 {
        let target = inp.target.ok_or_else(|| need("a target density"))?;
        let t = rkl_loss(g, drawn.expect("drawn"), target)?;
        excluded = t.excluded;
        rkl = Some(t.loss);
    }

    let mut adv = None;
    if w.lambda1 > 0.0 {
        let (disc, dp) = inp.disc.ok_or_else(|| need("a discriminator"))?;
        let (rv, crv) = cond_real.expect("real batch");
        let fake = drawn.expect("drawn").x;
        adv = Some(adv_loss(disc, g, dp, rv, fake, crv, cond_fake.expect("cond"))?);
    }

    let mut parts = Vec::new();
    if let Some(a) = adv {
        parts.push(g.scale(a, -w.lambda1)?);
    }
    if let Some(r) = rkl {
        parts.push(g.scale(r, w.lambda2)?);
    }
    if let Some(f) = fkl {
        parts.push(g.scale(f, w.lambda3)?);
    }
    let mut total = parts[0];
    for &q in &parts[1..] {
        total = g.add(total, q)?;
    }
    Ok(ObjectiveTerms {
        total,
        fkl,
        rkl,
        adv,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{Base, FlowConfig, MaskKind, Projection};
    use crate::target::StandardNormal;
    use approx::assert_relative_eq;
    use core::f64::consts::LN_2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flow(rng: &mut ChaCha8Rng) -> FlowModel {
        let cfg = FlowConfig {
            dim: 2,
            cond_dim: 1,
            n_layers: 2,
            hidden: vec![8],
            masks: MaskKind::Alternating,
            base: Base::Normal,
            projection: Projection::None,
        };
        FlowModel::new(cfg, rng).unwrap()
    }

    fn zero_disc(rng: &mut ChaCha8Rng) -> Discriminator {
        let mut d = Discriminator::new(2, 1, &[4], DiscInput::Raw, rng);
        for v in d.params_mut().values_mut() {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        d
    }

    #[test]
    fn fkl_of_origin_is_ln_two_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = flow(&mut rng);
        let mut g = Graph::new();
        let p = m.params().bind(&mut g, true);
        let x = g.constant(Tensor::zeros(&[1, 2]));
        let c = g.constant(Tensor::zeros(&[1, 1]));
        let l = fkl_loss(&m, &mut g, &p, x, c).unwrap();
        assert_relative_eq!(g.value(l).item().unwrap(), crate::LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn rkl_zero_when_q_equals_p_and_shift_moves_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = flow(&mut rng);
        let z = m.sample_base(64, &mut rng);
        let eval = |shift: f64| {
            let mut g = Graph::new();
            let p = m.params().bind(&mut g, true);
            let c = g.constant(Tensor::zeros(&[64, 1]));
            let d = draw(&m, &mut g, &p, &z, c).unwrap();
            let t = rkl_loss(&mut g, d, &StandardNormal { dim: 2, shift }).unwrap();
            g.value(t.loss).item().unwrap()
        };
        assert!(eval(0.0).abs() < 1e-12);
        assert_relative_eq!(eval(2.5), -2.5, epsilon = 1e-12);
    }

    #[test]
    fn half_discriminator_gives_two_ln_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = zero_disc(&mut rng);
        let mut g = Graph::new();
        let p = d.params().bind(&mut g, true);
        let x = g.constant(Tensor::full(&[3, 2], 0.7));
        let c = g.constant(Tensor::zeros(&[3, 1]));
        let l = adv_loss(&d, &mut g, &p, x, x, c, c).unwrap();
        assert_relative_eq!(g.value(l).item().unwrap(), 2.0 * LN_2, epsilon = 1e-12);
        let probs = d.prob(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 1])).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn objective_reductions_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = flow(&mut rng);
        let d = zero_disc(&mut rng);
        let real = Tensor::matrix(2, 2, vec![0.1, -0.3, 1.0, 0.5]).unwrap();
        let z = m.sample_base(2, &mut rng);
        let target = StandardNormal { dim: 2, shift: 0.0 };
        let run = |w: LossWeights| {
            let mut g = Graph::new();
            let p = m.params().bind(&mut g, true);
            let dp = d.params().bind(&mut g, true);
            let inp = ObjectiveInputs {
                model: &m,
                model_params: &p,
                disc: Some((&d, &dp)),
                real: Some(&real),
                z: Some(&z),
                target: Some(&target),
                cond: &[0.0],
            };
            let t = objective(&mut g, w, &inp).unwrap();
            (g.value(t.total).item().unwrap(), t.fkl.map(|f| g.value(f).item().unwrap()))
        };
        let (o, f) = run(LossWeights::new(0.0, 0.0, 1.0));
        assert_eq!(Some(o), f);
        let (o, _) = run(LossWeights::new(1.0, 0.0, 0.0));
        assert_relative_eq!(o, -2.0 * LN_2, epsilon = 1e-12);
        let (o1, _) = run(LossWeights::new(0.3, 0.5, 0.7));
        let (o2, _) = run(LossWeights::new(0.6, 1.0, 1.4));
        assert_relative_eq!(o2, 2.0 * o1, epsilon = 1e-12);
        let mut g = Graph::new();
        let p = m.params().bind(&mut g, true);
        let inp: ObjectiveInputs<'_, StandardNormal> = ObjectiveInputs {
            model: &m,
            model_params: &p,
            disc: None,
            real: None,
            z: None,
            target: None,
            cond: &[0.0],
        };
        assert!(objective(&mut g, LossWeights::new(0.0, 0.0, 0.0), &inp).is_err());
        assert!(objective(&mut g, LossWeights::new(0.0, 1.0, 0.0), &inp).is_err());
    }

    #[test]
    fn rkl_excludes_undefined_draws() {
        struct HalfPlane;
        impl LogDensity for HalfPlane {
            fn dim(&self) -> usize {
                2
            }
            fn log_prob_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
                grad.iter_mut().for_each(|g| *g = 0.0);
                if x[0] > 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = flow(&mut rng);
        let mut z = Tensor::full(&[20, 2], 1.0);
        z.data_mut()[0] = -1.0;
        let mut g = Graph::new();
        let p = m.params().bind(&mut g, true);
        let c = g.constant(Tensor::zeros(&[20, 1]));
        let d = draw(&m, &mut g, &p, &z, c).unwrap();
        let t = rkl_loss(&mut g, d, &HalfPlane).unwrap();
        assert_eq!(t.excluded, 1);
        let z = m.sample_base(20, &mut rng);
        let d = draw(&m, &mut g, &p, &z, c).unwrap();
        assert!(rkl_loss(&mut g, d, &HalfPlane).is_err());
    }
}

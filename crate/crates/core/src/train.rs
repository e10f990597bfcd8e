//! Two-phase training: a KL-only warm-up until convergence, then the
//! adversarial phase alternating generator and discriminator updates.

use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{objective, Discriminator, LossWeights, ObjectiveInputs};
use crate::autograd::Graph;
use crate::error::{contract, invalid, Error, Result};
use crate::flow::FlowModel;
use crate::optim::{Adam, Schedule};
use crate::target::LogDensity;
use crate::tensor::Tensor;

/// Training objective family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    Fkl,
    Rkl,
    FklRkl,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Fkl, Variant::Rkl, Variant::FklRkl];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Fkl => "FKL",
            Variant::Rkl => "RKL",
            Variant::FklRkl => "FKL&RKL",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fkl" => Ok(Variant::Fkl),
            "rkl" => Ok(Variant::Rkl),
            "fkl&rkl" | "fkl_rkl" | "fkl+rkl" | "both" => Ok(Variant::FklRkl),
            other => Err(invalid(format!("unknown variant {other}"))),
        }
    }
}

/// Which weight table row applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Family {
    Synthetic,
    Xy,
    Exy,
}

/// Phase-1 and phase-2 weights. Baselines (`adversarial = false`) keep
/// λ₁ = 0 in both phases.
pub fn preset_weights(variant: Variant, family: Family, adversarial: bool) -> (LossWeights, LossWeights) {
    let (l2, l3) = match (variant, family) {
        (Variant::Fkl, _) => (0.0, 1.0),
        (Variant::Rkl, _) => (1.0, 0.0),
        (Variant::FklRkl, Family::Exy) => (1.0, 1.0),
        (Variant::FklRkl, _) => (0.5, 1.0),
    };
    let l1 = match (variant, family) {
        (_, Family::Synthetic) | (Variant::FklRkl, _) => 1.0,
        (Variant::Fkl, _) => 100.0,
        (Variant::Rkl, Family::Xy) => 10.0,
        (Variant::Rkl, Family::Exy) => 5.0,
    };
    let p1 = LossWeights::new(0.0, l2, l3);
    let p2 = LossWeights::new(if adversarial { l1 } else { 0.0 }, l2, l3);
    (p1, p2)
}

/// Training data and target for one condition.
#[derive(Clone)]
pub struct ConditionData {
    pub cond: Vec<f64>,
    /// `[N, D]` training samples; may be empty when no term needs data.
    pub train: Tensor,
    /// `[Nv, D]` held-out samples for the validation objective.
    pub valid: Tensor,
    pub target: Option<Arc<dyn LogDensity>>,
}

impl core::fmt::Debug for ConditionData {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ConditionData")
            .field("cond", &self.cond)
            .field("train_rows", &self.train.rows())
            .field("valid_rows", &self.valid.rows())
            .field("has_target", &self.target.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Phase1Config {
    /// λ₁ must be zero.
    pub weights: LossWeights,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub tolerance: f64,
    /// Minibatches per condition per epoch when no data term is active.
    pub batches_per_epoch: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Phase2Config {
    /// λ₂ and λ₃; λ₁ comes from `lambda1`.
    pub weights: LossWeights,
    pub iterations: usize,
    pub lambda1: Schedule,
    pub lr_gen: f64,
    pub lr_disc: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
    pub batch_size: usize,
    /// Fractions of each phase's length at which learning rates are multiplied by `lr_decay_factor`.
    pub lr_decay_at: Vec<f64>,
    pub lr_decay_factor: f64,
    /// Base draws per condition for the validation reverse-KL estimate.
    pub valid_draws: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if self.phase1.weights.lambda1 != 0.0 {
            return Err(contract("phase 1 runs with lambda1 = 0"));
        }
        if !self.phase2.lambda1.is_non_increasing() || !self.phase2.lambda1.is_sorted() {
            return Err(invalid("lambda1 schedule must be sorted and non-increasing"));
        }
        Ok(())
    }
}

/// λ₁ starting at `start` and dropping to `end` halfway through `iterations`.
pub fn halfway_schedule(start: f64, end: f64, iterations: usize) -> Schedule {
    Schedule {
        initial: start,
        steps: alloc::vec![(iterations / 2, end)],
    }
}

/// One logged step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub phase: u8,
    pub iteration: usize,
    pub weights: LossWeights,
    pub loss_total: f64,
    pub loss_fkl: Option<f64>,
    pub loss_rkl: Option<f64>,
    pub loss_adv: Option<f64>,
    pub lr_gen: f64,
    pub lr_disc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Phase1Report {
    pub epochs: usize,
    pub best_epoch: usize,
    /// Validation objective after each epoch.
    pub valid: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Phase2Report {
    pub trace: Vec<TraceRow>,
}

/// Cycles through a shuffled index list, reshuffling at each wrap.
struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

impl Cursor {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, data: &Tensor, m: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let d = data.last_dim();
        let mut out = Vec::with_capacity(m * d);
        for _ in 0..m {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.extend_from_slice(data.row(self.order[self.pos]));
            self.pos += 1;
        }
        Tensor::new(alloc::vec![m, d], out).expect("batch shape")
    }
}

fn check_data(data: &[ConditionData], w: &LossWeights, needs_real: bool) -> Result<()> {
    if data.is_empty() {
        return Err(invalid("no training conditions"));
    }
    for c in data {
        if needs_real && c.train.rows() == 0 {
            return Err(invalid(format!("condition {:?} has no training samples", c.cond)));
        }
        if w.lambda2 > 0.0 && c.target.is_none() {
            return Err(invalid(format!("condition {:?} has no target density", c.cond)));
        }
    }
    Ok(())
}

fn diverged(phase: u8, iteration: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(_) | Error::Domain { .. } => Error::Diverged {
            phase,
            iteration,
            detail: e.to_string(),
        },
        other => other,
    }
}

fn value(g: &Graph, v: Option<crate::autograd::Var>) -> Option<f64> {
    v.and_then(|v| g.value(v).item())
}

/// Runs the warm-up phase, then restores the parameters with the best
/// validation objective.
pub fn train_phase1(model: &mut FlowModel, data: &[ConditionData], cfg: &TrainConfig) -> Result<Phase1Report> {
    cfg.validate()?;
    let w = cfg.phase1.weights;
    w.validate()?;
    check_data(data, &w, w.lambda3 > 0.0)?;
    let m = cfg.batch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    // no draws are spent on data the objective never reads
    let mut cursors: Vec<Cursor> = if w.lambda3 > 0.0 {
        data.iter().map(|c| Cursor::new(c.train.rows(), &mut rng)).collect()
    } else {
        Vec::new()
    };
    let per_cond = if w.lambda3 > 0.0 {
        data.iter().map(|c| c.train.rows().div_ceil(m)).max().unwrap_or(1)
    } else {
        cfg.phase1.batches_per_epoch.max(1)
    };
    let total_iters = per_cond * data.len() * cfg.phase1.max_epochs;
    let lr = Schedule::decay(cfg.phase1.lr, total_iters, &cfg.lr_decay_at, cfg.lr_decay_factor);
    let mut adam = Adam::new(model.params());
    let mut report = Phase1Report::default();
    let mut best = (f64::INFINITY, model.params().clone());
    let mut stale = 0;
    let mut iteration = 0;

    for epoch in 0..cfg.phase1.max_epochs {
        for _ in 0..per_cond {
            for (ci, c) in data.iter().enumerate() {
                let real = (w.lambda3 > 0.0).then(|| cursors[ci].take(&c.train, m, &mut rng));
                let z = (w.lambda2 > 0.0).then(|| model.sample_base(m, &mut rng));
                let step_lr = lr.at(iteration);
                let mut g = Graph::new();
                let p = model.params().bind(&mut g, true);
                let inp = ObjectiveInputs {
                    model,
                    model_params: &p,
                    disc: None,
                    real: real.as_ref(),
                    z: z.as_ref(),
                    target: c.target.as_deref(),
                    cond: &c.cond,
                };
                let terms = objective(&mut g, w, &inp).map_err(|e| diverged(1, iteration, e))?;
                g.backward(terms.total).map_err(|e| diverged(1, iteration, e))?;
                let grads = model.params().grads(&g, &p);
                report.trace.push(TraceRow {
                    phase: 1,
                    iteration,
                    weights: w,
                    loss_total: g.value(terms.total).item().unwrap_or(f64::NAN),
                    loss_fkl: value(&g, terms.fkl),
                    loss_rkl: value(&g, terms.rkl),
                    loss_adv: None,
                    lr_gen: step_lr,
                    lr_disc: None,
                });
                adam.step(model.params_mut(), &grads, step_lr)
                    .map_err(|e| diverged(1, iteration, e))?;
                iteration += 1;
            }
        }
        report.epochs = epoch + 1;
        let v = validation_objective(model, data, w, cfg).map_err(|e| diverged(1, iteration, e))?;
        report.valid.push(v);
        if v < best.0 - cfg.phase1.tolerance {
            best = (v, model.params().clone());
            report.best_epoch = epoch + 1;
            stale = 0;
        } else {
            if v < best.0 {
                best = (v, model.params().clone());
                report.best_epoch = epoch + 1;
            }
            stale += 1;
            if cfg.phase1.patience > 0 && stale >= cfg.phase1.patience {
                break;
            }
        }
    }
    if best.0.is_finite() {
        *model.params_mut() = best.1;
    }
    Ok(report)
}

/// Phase-1 objective averaged over conditions on held-out data and fixed base draws.
pub fn validation_objective(
    model: &FlowModel,
    data: &[ConditionData],
    w: LossWeights,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut acc = 0.0;
    for c in data {
        let real = if w.lambda3 > 0.0 {
            let v = if c.valid.rows() > 0 { &c.valid } else { &c.train };
            Some(v.clone())
        } else {
            None
        };
        let z = (w.lambda2 > 0.0).then(|| model.sample_base(cfg.valid_draws.max(1), &mut rng));
        let mut g = Graph::new();
        let p = model.params().bind(&mut g, false);
        let inp = ObjectiveInputs {
            model,
            model_params: &p,
            disc: None,
            real: real.as_ref(),
            z: z.as_ref(),
            target: c.target.as_deref(),
            cond: &c.cond,
        };
        let terms = objective(&mut g, w.with_lambda1(0.0), &inp)?;
        acc += g.value(terms.total).item().unwrap_or(f64::NAN);
    }
    Ok(acc / data.len() as f64)
}

/// Adversarial phase: per iteration one generator descent step on the
/// objective, then one discriminator ascent step on the same graph.
/// `observer` sees the model after every update (and once before the first).
pub fn train_phase2<F>(
    model: &mut FlowModel,
    disc: &mut Discriminator,
    data: &[ConditionData],
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<Phase2Report>
where
    F: FnMut(usize, &FlowModel),
{
    cfg.validate()?;
    let p2 = &cfg.phase2;
    let k = p2.iterations;
    let mut report = Phase2Report::default();
    observer(0, model);
    if k == 0 {
        return Ok(report);
    }
    let needs_real = p2.weights.lambda3 > 0.0 || p2.lambda1.initial > 0.0;
    check_data(data, &p2.weights, needs_real)?;
    let m = cfg.batch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut cursors: Vec<Cursor> = data.iter().map(|c| Cursor::new(c.train.rows(), &mut rng)).collect();
    let lr_gen = Schedule::decay(p2.lr_gen, k, &cfg.lr_decay_at, cfg.lr_decay_factor);
    let lr_disc = Schedule::decay(p2.lr_disc, k, &cfg.lr_decay_at, cfg.lr_decay_factor);
    let mut adam_gen = Adam::new(model.params());
    let mut adam_disc = Adam::new(disc.params());

    for it in 0..k {
        let ci = it % data.len();
        let c = &data[ci];
        let w = p2.weights.with_lambda1(p2.lambda1.at(it));
        let real = (w.lambda1 > 0.0 || w.lambda3 > 0.0).then(|| cursors[ci].take(&c.train, m, &mut rng));
        let z = (w.lambda1 > 0.0 || w.lambda2 > 0.0).then(|| model.sample_base(m, &mut rng));
        let mut g = Graph::new();
        let p = model.params().bind(&mut g, true);
        let dp = disc.params().bind(&mut g, w.lambda1 > 0.0);
        let inp = ObjectiveInputs {
            model,
            model_params: &p,
            disc: Some((disc, &dp)),
            real: real.as_ref(),
            z: z.as_ref(),
            target: c.target.as_deref(),
            cond: &c.cond,
        };
        let terms = objective(&mut g, w, &inp).map_err(|e| diverged(2, it, e))?;
        g.backward(terms.total).map_err(|e| diverged(2, it, e))?;
        let gen_grads = model.params().grads(&g, &p);
        let mut disc_grads = disc.params().grads(&g, &dp);
        // the discriminator climbs the objective
        for t in &mut disc_grads {
            t.data_mut().iter_mut().for_each(|v| *v = -*v);
        }
        let (lg, ld) = (lr_gen.at(it), lr_disc.at(it));
        report.trace.push(TraceRow {
            phase: 2,
            iteration: it,
            weights: w,
            loss_total: g.value(terms.total).item().unwrap_or(f64::NAN),
            loss_fkl: value(&g, terms.fkl),
            loss_rkl: value(&g, terms.rkl),
            loss_adv: value(&g, terms.adv),
            lr_gen: lg,
            lr_disc: Some(ld),
        });
        if disc_grads.iter().any(|t| !t.all_finite()) {
            return Err(diverged(2, it, Error::NonFinite("discriminator gradient")));
        }
        adam_gen.step(model.params_mut(), &gen_grads, lg).map_err(|e| diverged(2, it, e))?;
        if w.lambda1 > 0.0 {
            adam_disc.step(disc.params_mut(), &disc_grads, ld).map_err(|e| diverged(2, it, e))?;
        }
        observer(it + 1, model);
    }
    Ok(report)
}

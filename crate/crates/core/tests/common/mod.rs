//! Central finite-difference gradient checks shared by the integration tests.
#![allow(dead_code)]

pub mod exact;

use advnf_core::flow::{Base, FlowConfig, FlowModel, MaskKind, Projection};
use advnf_core::nn::{Bound, ParamStore};
use advnf_core::{Graph, Result, Tensor, UnaryFn, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

/// Tally of compared gradient entries.
#[derive(Debug, Default, Clone, Copy)]
pub struct CheckStats {
    pub checked: usize,
    pub failed: usize,
    /// Largest relative error among entries above the absolute floor.
    pub worst_rel: f64,
    pub worst_abs: f64,
}

impl CheckStats {
    pub fn record(&mut self, analytic: f64, numeric: f64, rel_tol: f64) {
        self.checked += 1;
        let d = (analytic - numeric).abs();
        self.worst_abs = self.worst_abs.max(d);
        if d <= ABS_FLOOR || !d.is_finite() && analytic == numeric {
            return;
        }
        let rel = d / analytic.abs().max(numeric.abs());
        self.worst_rel = self.worst_rel.max(rel);
        if rel >= rel_tol {
            self.failed += 1;
        }
    }

    pub fn merge(&mut self, other: CheckStats) {
        self.checked += other.checked;
        self.failed += other.failed;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
        self.worst_abs = self.worst_abs.max(other.worst_abs);
    }

    pub fn passed(&self) -> bool {
        self.failed == 0 && self.checked > 0
    }
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Uniform draws kept at least `gap` away from every point in `kinks`.
pub fn uniform_avoiding(shape: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts `f(inputs)` with fixed random weights and compares the reverse
/// gradient of every input entry with a central difference.
pub fn check_op<F>(inputs: &[Tensor], seed: u64, f: F) -> CheckStats
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let scalar = |xs: &[Tensor], w: Option<&Tensor>| -> (f64, Tensor) {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        let val = g.value(out).clone();
        let s = match w {
            Some(w) => val.data().iter().zip(w.data()).map(|(a, b)| a * b).sum(),
            None => 0.0,
        };
        (s, val)
    };
    let (_, out) = scalar(inputs, None);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = uniform(out.shape(), -1.0, 1.0, &mut rng);

    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = f(&mut g, &leaves).unwrap();
    let wv = g.constant(weights.clone());
    let prod = g.mul(out, wv).unwrap();
    let root = g.sum_all(prod).unwrap();
    g.backward(root).unwrap();
    let grads: Vec<Tensor> = leaves
        .iter()
        .zip(inputs)
        .map(|(&l, x)| g.grad(l).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut stats = CheckStats::default();
    let mut xs = inputs.to_vec();
    for i in 0..xs.len() {
        for j in 0..xs[i].numel() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + H;
            let (plus, _) = scalar(&xs, Some(&weights));
            xs[i].data_mut()[j] = orig - H;
            let (minus, _) = scalar(&xs, Some(&weights));
            xs[i].data_mut()[j] = orig;
            stats.record(grads[i].data()[j], (plus - minus) / (2.0 * H), REL_TOL);
        }
    }
    stats
}

/// Compares parameter gradients of a scalar graph function with central
/// differences on a copy of the store.
pub fn check_params<F>(store: &ParamStore, rel_tol: f64, f: F) -> CheckStats
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> f64 {
        let mut g = Graph::new();
        let p = s.bind(&mut g, false);
        let root = f(&mut g, &p).unwrap();
        g.value(root).item().unwrap()
    };
    let mut g = Graph::new();
    let p = store.bind(&mut g, true);
    let root = f(&mut g, &p).unwrap();
    g.backward(root).unwrap();
    let grads = store.grads(&g, &p);

    let mut stats = CheckStats::default();
    let mut s = store.clone();
    for i in 0..s.len() {
        for j in 0..s.values()[i].numel() {
            let orig = s.values()[i].data()[j];
            s.values_mut()[i].data_mut()[j] = orig + H;
            let plus = eval(&s);
            s.values_mut()[i].data_mut()[j] = orig - H;
            let minus = eval(&s);
            s.values_mut()[i].data_mut()[j] = orig;
            stats.record(grads[i].data()[j], (plus - minus) / (2.0 * H), rel_tol);
        }
    }
    stats
}

/// Fills every parameter with uniform draws so no head starts at zero.
pub fn randomize(store: &mut ParamStore, scale: f64, rng: &mut ChaCha8Rng) {
    for t in store.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

/// A small conditional flow with every parameter randomised.
pub fn random_flow(dim: usize, layers: usize, projection: Projection, seed: u64) -> FlowModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = if projection == Projection::None {
        MaskKind::Alternating
    } else {
        let n = (dim as f64).sqrt().round() as usize;
        MaskKind::Checkerboard { n }
    };
    let cfg = FlowConfig {
        dim,
        cond_dim: 1,
        n_layers: layers,
        hidden: vec![8, 8],
        masks,
        base: Base::Normal,
        projection,
    };
    let mut m = FlowModel::new(cfg, &mut rng).unwrap();
    randomize(m.params_mut(), 0.5, &mut rng);
    m
}

/// Every autograd operation exercised by [`run_op`].
pub const OPS: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "square",
    "exp",
    "log",
    "tanh",
    "relu",
    "sigmoid",
    "softplus",
    "log_sigmoid",
    "sin",
    "cos",
    "atan",
    "scale",
    "offset",
    "clamp",
    "sum",
    "mean",
    "sum_all",
    "mean_all",
    "concat",
    "mask_select",
    "gather",
    "scatter",
    "row_fn",
];

fn unary_of(name: &str) -> Option<UnaryFn> {
    Some(match name {
        "neg" => UnaryFn::Neg,
        "square" => UnaryFn::Square,
        "exp" => UnaryFn::Exp,
        "log" => UnaryFn::Log,
        "tanh" => UnaryFn::Tanh,
        "relu" => UnaryFn::Relu,
        "sigmoid" => UnaryFn::Sigmoid,
        "softplus" => UnaryFn::Softplus,
        "log_sigmoid" => UnaryFn::LogSigmoid,
        "sin" => UnaryFn::Sin,
        "cos" => UnaryFn::Cos,
        "atan" => UnaryFn::Atan,
        _ => return None,
    })
}

/// `Σᵢ sin(xᵢ) · x_{i+1}` around each row, with its gradient.
fn ring_fn(x: &Tensor) -> (Vec<f64>, Tensor) {
    let d = x.last_dim();
    let mut values = Vec::new();
    let mut grads = vec![0.0; x.numel()];
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut v = 0.0;
        for i in 0..d {
            let nx = (i + 1) % d;
            v += row[i].sin() * row[nx];
            grads[r * d + i] += row[i].cos() * row[nx];
            grads[r * d + nx] += row[i].sin();
        }
        values.push(v);
    }
    (values, Tensor::new(x.shape().to_vec(), grads).unwrap())
}

/// One random instance of operation `name`.
pub fn run_op(name: &str, seed: u64) -> CheckStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..5);
    let n = rng.gen_range(1..6);
    if let Some(u) = unary_of(name) {
        let x = match u {
            UnaryFn::Log => uniform(&[m, n], 0.2, 3.0, &mut rng),
            UnaryFn::Relu => uniform_avoiding(&[m, n], -2.0, 2.0, &[0.0], 1e-3, &mut rng),
            _ => uniform(&[m, n], -2.0, 2.0, &mut rng),
        };
        return check_op(&[x], seed, move |g, v| g.unary(u, v[0]));
    }
    match name {
        "matmul" => {
            let k = rng.gen_range(1..5);
            let a = uniform(&[m, k], -1.0, 1.0, &mut rng);
            let b = uniform(&[k, n], -1.0, 1.0, &mut rng);
            check_op(&[a, b], seed, |g, v| g.matmul(v[0], v[1]))
        }
        "add" | "sub" | "mul" | "div" => {
            let a = uniform(&[m, n], -2.0, 2.0, &mut rng);
            let bshape = if rng.gen_bool(0.5) { vec![m, n] } else { vec![n] };
            let b = if name == "div" {
                let mut t = uniform(&bshape, 0.5, 2.0, &mut rng);
                t.data_mut().iter_mut().for_each(|v| {
                    if rng.gen_bool(0.5) {
                        *v = -*v
                    }
                });
                t
            } else {
                uniform(&bshape, -2.0, 2.0, &mut rng)
            };
            let op = name.to_string();
            check_op(&[a, b], seed, move |g, v| match op.as_str() {
                "add" => g.add(v[0], v[1]),
                "sub" => g.sub(v[0], v[1]),
                "mul" => g.mul(v[0], v[1]),
                _ => g.div(v[0], v[1]),
            })
        }
        "scale" => {
            let f = rng.gen_range(-3.0..3.0);
            check_op(&[uniform(&[m, n], -2.0, 2.0, &mut rng)], seed, move |g, v| g.scale(v[0], f))
        }
        "offset" => {
            let c = rng.gen_range(-3.0..3.0);
            check_op(&[uniform(&[m, n], -2.0, 2.0, &mut rng)], seed, move |g, v| g.offset(v[0], c))
        }
        "clamp" => {
            let x = uniform_avoiding(&[m, n], -1.0, 1.0, &[-0.5, 0.5], 1e-3, &mut rng);
            check_op(&[x], seed, |g, v| g.clamp(v[0], -0.5, 0.5))
        }
        "sum" | "mean" => {
            let k = rng.gen_range(1..4);
            let x = uniform(&[m, n, k], -2.0, 2.0, &mut rng);
            let axes: Vec<usize> = (0..3).filter(|_| rng.gen_bool(0.5)).collect();
            let mean = name == "mean";
            check_op(&[x], seed, move |g, v| if mean { g.mean(v[0], &axes) } else { g.sum(v[0], &axes) })
        }
        "sum_all" => check_op(&[uniform(&[m, n], -2.0, 2.0, &mut rng)], seed, |g, v| g.sum_all(v[0])),
        "mean_all" => check_op(&[uniform(&[m, n], -2.0, 2.0, &mut rng)], seed, |g, v| g.mean_all(v[0])),
        "concat" => {
            let axis = rng.gen_range(0..2);
            let parts: Vec<Tensor> = (0..rng.gen_range(2..4))
                .map(|_| {
                    let w = rng.gen_range(1..4);
                    let shape = if axis == 0 { [w, n] } else { [m, w] };
                    uniform(&shape, -2.0, 2.0, &mut rng)
                })
                .collect();
            check_op(&parts, seed, move |g, v| g.concat(v, axis))
        }
        "mask_select" => {
            let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let pick = rng.gen_range(0..n);
            mask[pick] = true;
            check_op(&[uniform(&[m, n], -2.0, 2.0, &mut rng)], seed, move |g, v| g.mask_select(v[0], &mask))
        }
        "gather" => {
            let index: Vec<usize> = (0..rng.gen_range(1..7)).map(|_| rng.gen_range(0..n)).collect();
            check_op(&[uniform(&[m, n], -2.0, 2.0, &mut rng)], seed, move |g, v| g.gather(v[0], &index))
        }
        "scatter" => {
            let width = n + rng.gen_range(0..3);
            let mut slots: Vec<usize> = (0..width).collect();
            for i in (1..slots.len()).rev() {
                slots.swap(i, rng.gen_range(0..=i));
            }
            slots.truncate(rng.gen_range(1..=width));
            let x = uniform(&[m, slots.len()], -2.0, 2.0, &mut rng);
            check_op(&[x], seed, move |g, v| g.scatter(v[0], &slots, width))
        }
        "row_fn" => {
            let x = uniform(&[m, n.max(2)], -2.0, 2.0, &mut rng);
            check_op(&[x], seed, |g, v| {
                let (values, grads) = ring_fn(g.value(v[0]));
                g.row_fn(v[0], values, grads)
            })
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// Runs `instances` random checks of every operation.
pub fn run_catalog(instances: u64) -> Vec<(&'static str, CheckStats)> {
    OPS.iter()
        .enumerate()
        .map(|(k, &name)| {
            let mut total = CheckStats::default();
            for i in 0..instances {
                total.merge(run_op(name, 1000 * k as u64 + i));
            }
            (name, total)
        })
        .collect()
}

/// `log q(x | c)` parameter gradients of a randomised flow on a random batch.
pub fn flow_log_prob_check(projection: Projection, seed: u64) -> CheckStats {
    let dim = if projection == Projection::None { 4 } else { 9 };
    let flow = random_flow(dim, 3, projection, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let x = if projection == Projection::None {
        uniform(&[3, dim], -2.0, 2.0, &mut rng)
    } else {
        uniform(&[3, dim], 0.1, 6.1, &mut rng)
    };
    let cond = uniform(&[3, 1], 0.5, 2.0, &mut rng);
    check_params(flow.params(), REL_TOL, |g, p| {
        let xv = g.constant(x.clone());
        let cv = g.constant(cond.clone());
        let lp = flow.log_prob_graph(g, p, xv, cv)?;
        let w = g.constant(Tensor::vector(vec![0.7, -1.3, 0.4]));
        let s = g.mul(lp, w)?;
        g.sum_all(s)
    })
}

/// Largest `|inverse(forward(z)) − z|` over `n` base draws, with matching
/// log-determinants.
pub fn invertibility_error(n: usize, seed: u64) -> f64 {
    let flow = random_flow(4, 10, Projection::None, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = flow.sample_base(n, &mut rng);
    let cond = uniform(&[n, 1], 0.1, 3.0, &mut rng);
    let (x, ld_f) = flow.forward(&z, &cond).unwrap();
    let (z2, ld_i) = flow.inverse(&x, &cond).unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in z.data().iter().zip(z2.data()) {
        worst = worst.max((a - b).abs());
    }
    for (a, b) in ld_f.iter().zip(&ld_i) {
        worst = worst.max((a + b).abs());
    }
    worst
}

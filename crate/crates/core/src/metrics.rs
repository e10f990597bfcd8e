//! NLL, acceptance rate, histogram overlap and 1-D earth mover's distance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::flow::FlowModel;
use crate::lattice::{energy_per_site, log_boltzmann_unnorm, magnetization, LatticeCondition, SpinConfig};
use crate::mcmc::imh_resample;
use crate::tensor::Tensor;

/// Bin masses over ascending edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    masses: Vec<f64>,
    /// Values that fell outside the edges and were clamped into an end bin.
    pub clamped: usize,
}

impl Histogram {
    pub fn new(edges: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || masses.len() + 1 != edges.len() {
            return Err(invalid("histogram needs len(edges) = len(masses) + 1 >= 2"));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("histogram edges must be strictly ascending"));
        }
        if masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(invalid("histogram masses must be nonnegative"));
        }
        Ok(Self {
            edges,
            masses,
            clamped: 0,
        })
    }

    /// `bins` equal-width bins on `[lo, hi]`, all empty.
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(lo < hi) {
            return Err(invalid("uniform histogram needs bins > 0 and lo < hi"));
        }
        let w = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|i| lo + w * i as f64).collect();
        edges[bins] = hi;
        Self::new(edges, vec![0.0; bins])
    }

    /// Adds unit mass for `v`, clamping out-of-range values into an end bin.
    pub fn add(&mut self, v: f64) {
        let n = self.masses.len();
        let (lo, hi) = (self.edges[0], self.edges[n]);
        let idx = if v < lo {
            self.clamped += 1;
            0
        } else if v >= hi {
            if v > hi {
                self.clamped += 1;
            }
            n - 1
        } else {
            // first edge strictly greater than v, minus one
            self.edges.partition_point(|&e| e <= v) - 1
        };
        self.masses[idx.min(n - 1)] += 1.0;
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Masses scaled to unit sum (all zeros stay zero).
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total();
        if t > 0.0 {
            self.masses.iter().map(|m| m / t).collect()
        } else {
            self.masses.clone()
        }
    }

    fn check_edges(&self, other: &Histogram, op: &'static str) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::Shape {
                op,
                lhs: vec![self.edges.len()],
                rhs: vec![other.edges.len()],
            });
        }
        Ok(())
    }
}

/// `100 · Σ min(p̂ᵢ, q̂ᵢ)` over unit-normalised masses.
pub fn percent_overlap(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_edges(q, "percent_overlap")?;
    let (a, b) = (p.normalized(), q.normalized());
    Ok(100.0 * a.iter().zip(&b).map(|(x, y)| x.min(*y)).sum::<f64>())
}

/// `Σⱼ |Σ_{k≤j} (p̂ₖ − q̂ₖ)|` in bin units.
pub fn emd_bins(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_edges(q, "emd_1d")?;
    let (a, b) = (p.normalized(), q.normalized());
    let mut cum = 0.0;
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(&b) {
        cum += x - y;
        acc += cum.abs();
    }
    Ok(acc)
}

/// [`emd_bins`] times the bin width, i.e. in units of the observable.
pub fn emd_1d(p: &Histogram, q: &Histogram) -> Result<f64> {
    let raw = emd_bins(p, q)?;
    let width = (p.edges[p.edges.len() - 1] - p.edges[0]) / p.masses.len() as f64;
    Ok(raw * width)
}

pub const ENERGY_BINS: usize = 80;
pub const MAGNETIZATION_BINS: usize = 40;

/// Per-site energy (80 bins on `[−2, 0]`) and magnetization (40 bins on `[0, 1]`).
pub fn observable_histograms(configs: &[SpinConfig], j: f64, k: f64) -> Result<(Histogram, Histogram)> {
    let mut e = Histogram::uniform(-2.0, 0.0, ENERGY_BINS)?;
    let mut m = Histogram::uniform(0.0, 1.0, MAGNETIZATION_BINS)?;
    for s in configs {
        e.add(energy_per_site(s, j, k)?);
        m.add(magnetization(s));
    }
    Ok((e, m))
}

/// `−mean log q(x | c)` over a `[N, D]` test set.
pub fn nll(model: &FlowModel, test: &Tensor, cond: &[f64]) -> Result<f64> {
    if test.rows() == 0 {
        return Err(invalid("NLL needs a nonempty test set"));
    }
    let c = model.cond_batch(cond, test.rows())?;
    let lp = model.log_prob(test, &c)?;
    Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Metrics for one condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionMetrics {
    pub nll: f64,
    pub acceptance_rate: f64,
    pub ol_energy: f64,
    /// In observable units (not yet scaled by 1000).
    pub emd_energy: f64,
    pub ol_mag: f64,
    pub emd_mag: f64,
    pub emd_energy_bins: f64,
    pub emd_mag_bins: f64,
    pub mean_energy: f64,
    pub mean_mag: f64,
}

/// Per-condition rows plus mean and population std across conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ConditionMetrics>,
    pub mean: ConditionMetrics,
    pub std: ConditionMetrics,
}

fn reduce(rows: &[ConditionMetrics], pick: impl Fn(&ConditionMetrics) -> f64) -> (f64, f64) {
    let xs: Vec<f64> = rows.iter().map(pick).collect();
    mean_std(&xs)
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<ConditionMetrics>) -> Self {
        let mut mean = ConditionMetrics {
            nll: 0.0,
            acceptance_rate: 0.0,
            ol_energy: 0.0,
            emd_energy: 0.0,
            ol_mag: 0.0,
            emd_mag: 0.0,
            emd_energy_bins: 0.0,
            emd_mag_bins: 0.0,
            mean_energy: 0.0,
            mean_mag: 0.0,
        };
        let mut std = mean;
        macro_rules! fill {
            ($($f:ident),*) => {
                $( (mean.$f, std.$f) = reduce(&rows, |r| r.$f); )*
            };
        }
        fill!(nll, acceptance_rate, ol_energy, emd_energy, ol_mag, emd_mag, emd_energy_bins, emd_mag_bins, mean_energy, mean_mag);
        Self { rows, mean, std }
    }
}

/// Everything needed to score one lattice condition.
#[derive(Debug, Clone)]
pub struct LatticeEval<'a> {
    pub condition: LatticeCondition,
    /// MCMC reference ensemble for the observable histograms.
    pub reference: &'a [SpinConfig],
    /// Held-out configurations for NLL, `[N, n²]`.
    pub test: &'a Tensor,
}

/// Compares an observable ensemble against a reference.
pub fn compare_ensembles(
    chain: &[SpinConfig],
    reference: &[SpinConfig],
    c: &LatticeCondition,
) -> Result<(f64, f64, f64, f64, f64, f64)> {
    if reference.is_empty() || chain.is_empty() {
        return Err(invalid("observable comparison needs nonempty ensembles"));
    }
    let (e_ref, m_ref) = observable_histograms(reference, c.j, c.k)?;
    let (e_gen, m_gen) = observable_histograms(chain, c.j, c.k)?;
    Ok((
        percent_overlap(&e_gen, &e_ref)?,
        emd_1d(&e_gen, &e_ref)?,
        emd_bins(&e_gen, &e_ref)?,
        percent_overlap(&m_gen, &m_ref)?,
        emd_1d(&m_gen, &m_ref)?,
        emd_bins(&m_gen, &m_ref)?,
    ))
}

/// Samples `n` configurations from the flow, de-biases them with IMH against
/// the Boltzmann target and scores the chain against the reference.
pub fn evaluate_condition<R: Rng + ?Sized>(
    model: &FlowModel,
    side: usize,
    eval: &LatticeEval<'_>,
    n: usize,
    rng: &mut R,
) -> Result<ConditionMetrics> {
    let c = eval.condition;
    let cond = c.embedding();
    let samples = model.sample(n, &cond, rng)?;
    let proposals: Vec<(SpinConfig, f64)> = (0..n)
        .map(|i| Ok((SpinConfig::new(side, samples.x.row(i).to_vec())?, samples.log_q[i])))
        .collect::<Result<_>>()?;
    let imh = imh_resample(
        proposals,
        |s: &SpinConfig| log_boltzmann_unnorm(s, &c).unwrap_or(f64::NAN),
        rng,
    )?;
    chain_metrics(model, &imh.chain, imh.acceptance_rate, eval)
}

/// Scores an already de-biased chain.
pub fn chain_metrics(
    model: &FlowModel,
    chain: &[SpinConfig],
    acceptance_rate: f64,
    eval: &LatticeEval<'_>,
) -> Result<ConditionMetrics> {
    let c = eval.condition;
    let (ol_e, emd_e, emd_e_bins, ol_m, emd_m, emd_m_bins) = compare_ensembles(chain, eval.reference, &c)?;
    let nll = nll(model, eval.test, &c.embedding())?;
    let energies: Vec<f64> = chain
        .iter()
        .map(|s| energy_per_site(s, c.j, c.k))
        .collect::<Result<_>>()?;
    let mags: Vec<f64> = chain.iter().map(magnetization).collect();
    Ok(ConditionMetrics {
        nll,
        acceptance_rate,
        ol_energy: ol_e,
        emd_energy: emd_e,
        ol_mag: ol_m,
        emd_mag: emd_m,
        emd_energy_bins: emd_e_bins,
        emd_mag_bins: emd_m_bins,
        mean_energy: mean_std(&energies).0,
        mean_mag: mean_std(&mags).0,
    })
}

/// Runs [`evaluate_condition`] over every condition with one RNG per condition.
pub fn evaluate_model<R: Rng>(
    model: &FlowModel,
    side: usize,
    evals: &[LatticeEval<'_>],
    n: usize,
    rngs: &mut [R],
) -> Result<MetricsReport> {
    if rngs.len() != evals.len() {
        return Err(invalid(format!("{} conditions but {} RNG streams", evals.len(), rngs.len())));
    }
    let rows = evals
        .iter()
        .zip(rngs.iter_mut())
        .map(|(e, r)| evaluate_condition(model, side, e, n, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn h(m: &[f64]) -> Histogram {
        let edges = (0..=m.len()).map(|i| i as f64).collect();
        Histogram::new(edges, m.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_examples() {
        let p = h(&[0.5, 0.5, 0.0]);
        let q = h(&[0.25, 0.25, 0.5]);
        assert_relative_eq!(percent_overlap(&p, &q).unwrap(), 50.0, epsilon = 1e-12);
        assert_eq!(percent_overlap(&p, &p).unwrap(), 100.0);
        let a = h(&[1.0, 0.0, 0.0]);
        let b = h(&[0.0, 0.0, 1.0]);
        assert_relative_eq!(emd_1d(&a, &b).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(emd_1d(&a, &a).unwrap(), 0.0);
        assert_eq!(percent_overlap(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_edges_rejected() {
        let a = h(&[1.0, 0.0]);
        let b = h(&[1.0, 0.0, 0.0]);
        assert!(percent_overlap(&a, &b).is_err());
        assert!(emd_1d(&a, &b).is_err());
    }

    #[test]
    fn aligned_configs_fill_edge_bins() {
        let cfgs = vec![SpinConfig::aligned(4, 0.2); 5];
        let (e, m) = observable_histograms(&cfgs, 1.0, 0.0).unwrap();
        assert_eq!(e.masses()[0], 5.0);
        assert_eq!(m.masses()[MAGNETIZATION_BINS - 1], 5.0);
        assert_eq!(e.total(), 5.0);
        assert_eq!(e.clamped, 0);
        // EXY aligned energy is −3 per site: clamped
        let (e, _) = observable_histograms(&cfgs, 1.0, 1.0).unwrap();
        assert_eq!(e.clamped, 5);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }
}

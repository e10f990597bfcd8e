//! Single-site Metropolis-Hastings for lattice ensembles and independent
//! Metropolis-Hastings (IMH) for de-biasing any proposal with known density.

use alloc::vec::Vec;
use core::f64::consts::TAU;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::lattice::{local_energy_delta, LatticeCondition, SpinConfig};

/// Symmetric single-site proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Proposal {
    /// Fresh angle uniform on `[0, 2π)`.
    Uniform,
    /// `θ + U(−δ, δ)`, wrapped.
    Perturbation(f64),
    /// One of `k` equally spaced angles `2πi/k`.
    Discrete(usize),
}

impl Proposal {
    fn draw<R: Rng + ?Sized>(&self, current: f64, rng: &mut R) -> f64 {
        match *self {
            Proposal::Uniform => rng.gen_range(0.0..TAU),
            Proposal::Perturbation(delta) => current + rng.gen_range(-delta..delta),
            Proposal::Discrete(k) => TAU * rng.gen_range(0..k) as f64 / k as f64,
        }
    }
}

/// Settings for [`mh_generate`]. One "step" is one single-site update attempt.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MhConfig {
    pub burn_in_steps: usize,
    pub thinning_steps: usize,
    pub n_samples: usize,
    pub proposal: Proposal,
    pub seed: u64,
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thinning_steps < 1 {
            return Err(invalid("thinning must be at least 1"));
        }
        match self.proposal {
            Proposal::Perturbation(d) if !(d > 0.0) => Err(invalid("perturbation width must be positive")),
            Proposal::Discrete(0) => Err(invalid("discrete proposal needs at least one level")),
            _ => Ok(()),
        }
    }
}

/// One Metropolis update of a uniformly chosen site. Returns whether the
/// move was accepted.
pub fn mh_step<R: Rng + ?Sized>(
    s: &mut SpinConfig,
    c: &LatticeCondition,
    proposal: Proposal,
    rng: &mut R,
) -> bool {
    let n2 = s.n() * s.n();
    let site = rng.gen_range(0..n2);
    let candidate = proposal.draw(s.angles()[site], rng);
    let delta = local_energy_delta(s, site, candidate, c.j, c.k);
    let u: f64 = rng.gen();
    let accept = delta <= 0.0 || u < (-delta / c.temperature).exp();
    if accept {
        s.set(site, candidate);
    }
    accept
}

/// Runs a chain from uniformly random angles and returns `n_samples`
/// configurations spaced `thinning_steps` apart after `burn_in_steps`.
pub fn mh_generate(n: usize, c: &LatticeCondition, cfg: &MhConfig) -> Result<Vec<SpinConfig>> {
    cfg.validate()?;
    crate::lattice::BoltzmannTarget::new(n, *c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = (0..n * n).map(|_| rng.gen_range(0.0..TAU)).collect();
    let mut state = SpinConfig::new(n, init)?;
    for _ in 0..cfg.burn_in_steps {
        mh_step(&mut state, c, cfg.proposal, &mut rng);
    }
    let mut out = Vec::with_capacity(cfg.n_samples);
    while out.len() < cfg.n_samples {
        for _ in 0..cfg.thinning_steps {
            mh_step(&mut state, c, cfg.proposal, &mut rng);
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// Outcome of [`imh_resample`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImhResult<T> {
    /// Chain states; a rejected proposal repeats the current state.
    pub chain: Vec<T>,
    pub accepted: usize,
    pub total: usize,
    /// `100 · accepted / total`.
    pub acceptance_rate: f64,
    /// Proposals dropped because `log p` or `log q` was not finite.
    pub nonfinite: usize,
}

/// Independent Metropolis-Hastings over a stream of `(sample, log q)` draws.
///
/// The first valid draw initialises the chain and counts as accepted. After
/// that a draw `x'` replaces the current `x` with probability
/// `min(1, p(x') q(x) / (p(x) q(x')))`; `target_log_p` may be unnormalised.
/// Draws with a non-finite `log q` or `log p` are rejected and tallied in
/// [`ImhResult::nonfinite`]; before initialisation they are skipped.
pub fn imh_resample<T, I, F, R>(proposals: I, target_log_p: F, rng: &mut R) -> Result<ImhResult<T>>
where
    T: Clone,
    I: IntoIterator<Item = (T, f64)>,
    F: Fn(&T) -> f64,
    R: Rng + ?Sized,
{
    let mut chain: Vec<T> = Vec::new();
    let mut current: Option<(f64, f64)> = None;
    let (mut accepted, mut nonfinite) = (0usize, 0usize);
    for (x, log_q) in proposals {
        let log_p = if log_q.is_finite() { target_log_p(&x) } else { f64::NAN };
        let valid = log_q.is_finite() && log_p.is_finite();
        if !valid {
            nonfinite += 1;
        }
        match current {
            None => {
                if valid {
                    current = Some((log_p, log_q));
                    chain.push(x);
                    accepted += 1;
                }
            }
            Some((cur_p, cur_q)) => {
                let u: f64 = rng.gen();
                let log_ratio = (log_p - cur_p) + (cur_q - log_q);
                if valid && (log_ratio >= 0.0 || u < log_ratio.exp()) {
                    current = Some((log_p, log_q));
                    chain.push(x);
                    accepted += 1;
                } else {
                    let last = chain.last().expect("chain initialised").clone();
                    chain.push(last);
                }
            }
        }
    }
    if chain.is_empty() {
        return Err(invalid("IMH received no proposal with finite densities"));
    }
    let total = chain.len();
    Ok(ImhResult {
        chain,
        accepted,
        total,
        acceptance_rate: 100.0 * accepted as f64 / total as f64,
        nonfinite,
    })
}

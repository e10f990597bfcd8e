//! Independent reference computations for lattice and sampler tests.

use advnf_core::lattice::LatticeCondition;
use advnf_core::mcmc::{imh_resample, mh_generate, MhConfig, Proposal};
use advnf_core::lattice::energy_per_site;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

/// Energy by listing every unordered nearest-neighbour pair on the torus.
pub fn brute_bond_energy(angles: &[f64], n: usize, j: f64) -> f64 {
    let mut e = 0.0;
    for a in 0..n * n {
        for b in a + 1..n * n {
            let (ra, ca) = ((a / n) as i64, (a % n) as i64);
            let (rb, cb) = ((b / n) as i64, (b % n) as i64);
            let dr = (ra - rb).rem_euclid(n as i64).min((rb - ra).rem_euclid(n as i64));
            let dc = (ca - cb).rem_euclid(n as i64).min((cb - ca).rem_euclid(n as i64));
            if dr + dc == 1 {
                e -= j * (angles[a] - angles[b]).cos();
            }
        }
    }
    e
}

/// Plaquette sum with each square visited from its bottom-left corner,
/// going clockwise.
pub fn brute_plaquette_sum(angles: &[f64], n: usize) -> f64 {
    let at = |r: usize, c: usize| angles[(r % n) * n + (c % n)];
    let mut s = 0.0;
    for r in 0..n {
        for c in 0..n {
            let bl = at(r + 1, c);
            let tl = at(r, c);
            let tr = at(r, c + 1);
            let br = at(r + 1, c + 1);
            s += (bl - tl + tr - br).cos();
        }
    }
    s
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(m);
    let mut ws = Vec::with_capacity(m);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        xs.push(x);
        ws.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (xs, ws)
}

/// Exact mean energy per site of the 3×3 periodic XY model (J = 1) by
/// tensor-product Gauss–Legendre quadrature with one spin fixed at zero.
///
/// Rows are eliminated as a cycle 0 → 1 → 2 → 0; the vertical coupling
/// between two rows factorises over columns and is contracted one column
/// at a time.
pub fn xy3_mean_energy(temperature: f64, nodes: usize) -> f64 {
    let beta = 1.0 / temperature;
    let m = nodes;
    let (xs, ws) = gauss_legendre(m);
    let theta: Vec<f64> = xs.iter().map(|x| PI * (x + 1.0)).collect();
    let w: Vec<f64> = ws.iter().map(|v| PI * v).collect();
    let k: Vec<f64> = (0..m * m)
        .map(|ab| (beta * (theta[ab / m] - theta[ab % m]).cos()).exp())
        .collect();
    let k0: Vec<f64> = theta.iter().map(|t| (beta * t.cos()).exp()).collect();
    let m3 = m * m * m;
    let row_weight: Vec<f64> = (0..m3)
        .map(|idx| {
            let (a, b, c) = (idx / (m * m), (idx / m) % m, idx % m);
            let e = (theta[a] - theta[b]).cos() + (theta[b] - theta[c]).cos() + (theta[c] - theta[a]).cos();
            (beta * e).exp() * w[a] * w[b] * w[c]
        })
        .collect();
    let (mut z, mut num) = (0.0, 0.0);
    let mut u = vec![0.0; m3];
    let mut t1 = vec![0.0; m3];
    let mut t2 = vec![0.0; m3];
    let mut t3 = vec![0.0; m3];
    for a1 in 0..m {
        for a2 in 0..m {
            // θ ↦ −θ maps node i to node m−1−i and leaves the weight unchanged
            let mirror = (m - 1 - a1) * m + (m - 1 - a2);
            if a1 * m + a2 > mirror {
                continue;
            }
            let first = (beta * (theta[a1].cos() + (theta[a1] - theta[a2]).cos() + theta[a2].cos())).exp() * w[a1] * w[a2];
            for b in 0..m3 {
                let (b0, b1, b2) = (b / (m * m), (b / m) % m, b % m);
                u[b] = row_weight[b] * k0[b0] * k[a1 * m + b1] * k[a2 * m + b2];
            }
            t1.iter_mut().for_each(|v| *v = 0.0);
            for c0 in 0..m {
                let dst = &mut t1[c0 * m * m..(c0 + 1) * m * m];
                for b0 in 0..m {
                    let f = k[b0 * m + c0];
                    let src = &u[b0 * m * m..(b0 + 1) * m * m];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += f * s);
                }
            }
            t2.iter_mut().for_each(|v| *v = 0.0);
            for c0 in 0..m {
                for c1 in 0..m {
                    let dst = &mut t2[(c0 * m + c1) * m..(c0 * m + c1 + 1) * m];
                    for b1 in 0..m {
                        let f = k[b1 * m + c1];
                        let src = &t1[(c0 * m + b1) * m..(c0 * m + b1 + 1) * m];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += f * s);
                    }
                }
            }
            t3.iter_mut().for_each(|v| *v = 0.0);
            for row in 0..m * m {
                let dst = &mut t3[row * m..(row + 1) * m];
                for b2 in 0..m {
                    let f = t2[row * m + b2];
                    let src = &k[b2 * m..(b2 + 1) * m];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += f * s);
                }
            }
            let mut s = 0.0;
            for c in 0..m3 {
                let (c0, c1, c2) = (c / (m * m), (c / m) % m, c % m);
                s += t3[c] * row_weight[c] * k0[c0] * k[c1 * m + a1] * k[c2 * m + a2];
            }
            let mult = if a1 * m + a2 == mirror { 1.0 } else { 2.0 };
            z += mult * first * s;
            num += mult * first * s * theta[a1].cos();
        }
    }
    -2.0 * num / z
}

/// Mean and batch-means standard error.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// MCMC mean energy per site on the 3×3 XY lattice with its standard error.
pub fn xy3_mcmc_energy(temperature: f64, samples: usize, seed: u64) -> (f64, f64) {
    let c = LatticeCondition::xy(temperature).unwrap();
    let cfg = MhConfig {
        burn_in_steps: 9 * 2000,
        thinning_steps: 9 * 5,
        n_samples: samples,
        proposal: Proposal::Uniform,
        seed,
    };
    let e: Vec<f64> = mh_generate(3, &c, &cfg)
        .unwrap()
        .iter()
        .map(|s| energy_per_site(s, 1.0, 0.0).unwrap())
        .collect();
    batch_means(&e, 50)
}

pub fn normal_log_pdf(x: f64, mu: f64) -> f64 {
    -0.5 * (x - mu).powi(2) - 0.5 * (2.0 * PI).ln()
}

/// IMH over `n` draws from N(0, 1) towards N(1, 1): acceptance rate and chain.
pub fn gaussian_imh(n: usize, seed: u64) -> (f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = Normal::new(0.0, 1.0).unwrap();
    let draws: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let x = q.sample(&mut rng);
            (x, normal_log_pdf(x, 0.0))
        })
        .collect();
    let res = imh_resample(draws, |x| normal_log_pdf(*x, 1.0), &mut rng).unwrap();
    (res.acceptance_rate, res.chain)
}

/// Direct Monte-Carlo estimate of `E[min(1, w(x′)/w(x))]` in percent, with
/// `x ~ N(1, 1)`, `x′ ~ N(0, 1)` and `w = p/q`.
pub fn expected_acceptance_mc(pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Normal::new(1.0, 1.0).unwrap();
    let q = Normal::new(0.0, 1.0).unwrap();
    let log_w = |x: f64| normal_log_pdf(x, 1.0) - normal_log_pdf(x, 0.0);
    let total: f64 = (0..pairs)
        .map(|_| {
            let x = p.sample(&mut rng);
            let xp = q.sample(&mut rng);
            (log_w(xp) - log_w(x)).exp().min(1.0)
        })
        .sum();
    100.0 * total / pairs as f64
}

/// Kolmogorov–Smirnov distance between samples and a CDF.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Uniform angles for tests.
pub fn random_angles(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n * n).map(|_| rng.gen_range(0.0..2.0 * PI)).collect()
}

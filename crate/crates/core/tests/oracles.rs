mod common;

use advnf_core::lattice::{
    energy_per_site, exy_energy, local_energy_delta, magnetization, xy_energy, LatticeCondition, SpinConfig,
};
use advnf_core::mcmc::{imh_resample, mh_generate, mh_step, MhConfig, Proposal};
use advnf_core::metrics::observable_histograms;
use advnf_core::synthetic::{
    mog_log_density, rings_log_density_cartesian, GaussianComponent, MogParams, RingComponent, RingsParams,
    SyntheticDataset,
};
use common::exact::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;

#[test]
fn energies_match_brute_force_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [3, 4, 5, 7] {
        for _ in 0..20 {
            let a = random_angles(n, &mut rng);
            let s = SpinConfig::new(n, a.clone()).unwrap();
            let j = rng.gen_range(-2.0..2.0);
            let k = rng.gen_range(-2.0..2.0);
            let bonds = brute_bond_energy(&a, n, j);
            assert!((xy_energy(&s, j).unwrap() - bonds).abs() < 1e-12);
            let full = bonds - k * brute_plaquette_sum(&a, n);
            assert!((exy_energy(&s, j, k).unwrap() - full).abs() < 1e-12);
        }
    }
}

#[test]
fn incremental_energy_change_matches_recompute() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [3, 4, 6] {
        for _ in 0..50 {
            let s = SpinConfig::new(n, random_angles(n, &mut rng)).unwrap();
            let site = rng.gen_range(0..n * n);
            let v = rng.gen_range(0.0..2.0 * PI);
            let (j, k) = (rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0));
            let mut moved = s.clone();
            moved.set(site, v);
            let full = exy_energy(&moved, j, k).unwrap() - exy_energy(&s, j, k).unwrap();
            assert!((local_energy_delta(&s, site, v, j, k) - full).abs() < 1e-10);
        }
    }
}

#[test]
fn quadrature_rule_integrates_polynomials() {
    let (x, w) = gauss_legendre(48);
    for p in 0..20 {
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
        let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
        assert!((q - exact).abs() < 1e-13, "degree {p}");
    }
}

#[test]
fn mcmc_energy_matches_quadrature_on_3x3() {
    for (i, t) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let exact = xy3_mean_energy(t, 48);
        let (mean, se) = xy3_mcmc_energy(t, 50_000, 40 + i as u64);
        assert!((mean - exact).abs() < 3.0 * se, "T {t}: mcmc {mean} ± {se}, quadrature {exact}");
    }
}

#[test]
fn thinned_8x8_chain_is_nearly_uncorrelated() {
    let c = LatticeCondition::xy(1.0).unwrap();
    let cfg = MhConfig {
        burn_in_steps: 64 * 2000,
        thinning_steps: 64 * 320,
        n_samples: 2000,
        proposal: Proposal::Uniform,
        seed: 7,
    };
    let e: Vec<f64> = mh_generate(8, &c, &cfg)
        .unwrap()
        .iter()
        .map(|s| energy_per_site(s, 1.0, 0.0).unwrap())
        .collect();
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let cov = e.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / n;
    assert!(cov / var < 0.1, "lag-one autocorrelation {}", cov / var);
}

#[test]
fn histogram_mean_matches_direct_mean() {
    let c = LatticeCondition::xy(1.0).unwrap();
    let cfg = MhConfig {
        burn_in_steps: 64 * 1000,
        thinning_steps: 320,
        n_samples: 2000,
        proposal: Proposal::Uniform,
        seed: 3,
    };
    let configs = mh_generate(8, &c, &cfg).unwrap();
    let (eh, _) = observable_histograms(&configs, 1.0, 0.0).unwrap();
    let edges = eh.edges();
    let from_hist: f64 = eh
        .normalized()
        .iter()
        .enumerate()
        .map(|(i, m)| m * 0.5 * (edges[i] + edges[i + 1]))
        .sum();
    let direct = configs.iter().map(|s| energy_per_site(s, 1.0, 0.0).unwrap()).sum::<f64>() / configs.len() as f64;
    assert!((from_hist - direct).abs() < 2.0 / 80.0);
    assert!(configs.iter().all(|s| (0.0..=1.0).contains(&magnetization(s))));
}

#[test]
fn detailed_balance_on_two_state_toy() {
    let c = LatticeCondition::xy(1.5).unwrap();
    let n = 3;
    let decode = |code: usize| -> SpinConfig {
        SpinConfig::new(n, (0..9).map(|i| if code >> i & 1 == 1 { PI } else { 0.0 }).collect()).unwrap()
    };
    let weight = |code: usize| (-exy_energy(&decode(code), 1.0, 0.0).unwrap() / c.temperature).exp();
    let z: f64 = (0..512).map(weight).sum();
    let trials = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut row = |code: usize| -> Vec<f64> {
        let mut counts = vec![0.0; 512];
        for _ in 0..trials {
            let mut s = decode(code);
            mh_step(&mut s, &c, Proposal::Discrete(2), &mut rng);
            let next = s.angles().iter().enumerate().fold(0, |acc, (i, &a)| {
                acc | (usize::from((a - PI).abs() < 1e-9) << i)
            });
            counts[next] += 1.0;
        }
        counts.iter().map(|k| k / trials as f64).collect()
    };
    let mut pick = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..12 {
        let x = pick.gen_range(0..512);
        let px = row(x);
        for site in 0..9 {
            let y = x ^ (1 << site);
            let py = row(y);
            let (a, b) = (weight(x) / z * px[y], weight(y) / z * py[x]);
            let var_a = (weight(x) / z).powi(2) * px[y] * (1.0 - px[y]) / trials as f64;
            let var_b = (weight(y) / z).powi(2) * py[x] * (1.0 - py[x]) / trials as f64;
            assert!((a - b).abs() < 3.0 * (var_a + var_b).sqrt(), "{x} ↔ {y}: {a} vs {b}");
        }
    }
}

#[test]
fn imh_with_exact_proposal_accepts_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws: Vec<(f64, f64)> = (0..10_000)
        .map(|_| {
            let x: f64 = rng.sample(rand_distr::StandardNormal);
            (x, normal_log_pdf(x, 0.0))
        })
        .collect();
    let res = imh_resample(draws, |x| normal_log_pdf(*x, 0.0) + 3.0, &mut rng).unwrap();
    assert_eq!(res.acceptance_rate, 100.0);
}

#[test]
fn imh_gaussian_pair_matches_oracles() {
    let (ar, chain) = gaussian_imh(100_000, 5);
    let mc = expected_acceptance_mc(1_000_000, 6);
    assert!((ar - mc).abs() / mc < 0.01, "chain {ar} vs oracle {mc}");
    // closed form: P(D > 0) + E[e^D; D < 0] with D ~ N(−1, 2)
    let std = Normal::new(0.0, 1.0).unwrap();
    let closed = 100.0 * 2.0 * std.cdf(-1.0 / 2f64.sqrt());
    assert!((mc - closed).abs() / closed < 0.005, "oracle {mc} vs closed form {closed}");
    let target = Normal::new(1.0, 1.0).unwrap();
    let ks = ks_statistic(&chain, |x| target.cdf(x));
    assert!(ks < 0.01, "KS {ks}");
}

fn grid_integral(f: impl Fn([f64; 2]) -> f64, lo: f64, hi: f64, cells: usize) -> f64 {
    let h = (hi - lo) / cells as f64;
    let mut total = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            total += f([lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h]);
        }
    }
    total * h * h
}

#[test]
fn mixture_densities_integrate_to_one() {
    let skewed = MogParams::new(vec![
        GaussianComponent {
            weight: 0.3,
            mean: [1.0, -1.0],
            cov: [[0.5, 0.2], [0.2, 0.3]],
        },
        GaussianComponent {
            weight: 0.7,
            mean: [-2.0, 0.5],
            cov: [[0.2, -0.05], [-0.05, 0.4]],
        },
    ])
    .unwrap();
    for p in [MogParams::mog4(), MogParams::mog8(), skewed] {
        let total = grid_integral(|x| mog_log_density(x, &p).exp(), -10.0, 10.0, 2000);
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }
}

#[test]
fn rings_density_integrates_to_one_in_polar_coordinates() {
    for p in [RingsParams::rings4(), single_ring(1.0, 0.1)] {
        // Simpson in r, the midpoint rule is exact for the constant angular profile
        let (steps, r_max) = (60_000, 6.0);
        let h = r_max / steps as f64;
        let mut total = 0.0;
        for k in 0..16 {
            let phi = 2.0 * PI * (k as f64 + 0.5) / 16.0;
            let f = |r: f64| {
                if r == 0.0 {
                    return 0.0;
                }
                rings_log_density_cartesian([r * phi.cos(), r * phi.sin()], &p).unwrap().exp() * r
            };
            let mut s = f(0.0) + f(r_max);
            for i in 1..steps {
                s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            total += s * h / 3.0 * 2.0 * PI / 16.0;
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }
}

fn single_ring(radius: f64, std: f64) -> RingsParams {
    RingsParams::new(vec![RingComponent {
        weight: 1.0,
        radius,
        std,
    }])
    .unwrap()
}

#[test]
fn ring_density_ratio_matches_formula() {
    let p = single_ring(1.0, 0.1);
    let n = |r: f64| (-(r - 1.0f64).powi(2) / (2.0 * 0.01)).exp() / (2.0 * PI * 0.01).sqrt();
    let expected = (n(1.0) / 1.0) / (n(2.0) / 2.0);
    let got = (rings_log_density_cartesian([1.0, 0.0], &p).unwrap() - rings_log_density_cartesian([0.0, 2.0], &p).unwrap()).exp();
    assert!((got / expected - 1.0).abs() < 1e-10);
}

#[test]
fn log_sum_exp_agrees_with_naive_sum() {
    let p = MogParams::mog8();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..2000 {
        let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let naive: f64 = p
            .components()
            .iter()
            .map(|c| {
                let d = [x[0] - c.mean[0], x[1] - c.mean[1]];
                let det = c.cov[0][0] * c.cov[1][1] - c.cov[0][1] * c.cov[1][0];
                let q = (c.cov[1][1] * d[0] * d[0] - 2.0 * c.cov[0][1] * d[0] * d[1] + c.cov[0][0] * d[1] * d[1]) / det;
                c.weight * (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
            })
            .sum();
        if naive > 1e-300 {
            assert!((mog_log_density(x, &p) - naive.ln()).abs() < 1e-10);
        }
    }
}

#[test]
fn sample_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let one = SyntheticDataset::Mog(MogParams::isotropic(&[[1.0, 1.0]], 0.25).unwrap());
    let c = one.condition(0).unwrap();
    let xs = one.sample_component(&c, 100_000, &mut rng).unwrap();
    for d in 0..2 {
        let m = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
        assert!((m - 1.0).abs() < 0.02);
    }
    let ring = SyntheticDataset::Rings(single_ring(2.0, 0.05));
    let c = ring.condition(0).unwrap();
    let xs = ring.sample_component(&c, 100_000, &mut rng).unwrap();
    let r = xs.iter().map(|x| x[0].hypot(x[1])).sum::<f64>() / xs.len() as f64;
    assert!((1.99..=2.01).contains(&r), "{r}");
}

#[test]
fn sample_histogram_matches_cell_masses() {
    let p = MogParams::mog4();
    let data = SyntheticDataset::Mog(p.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 200_000;
    let pts = data.sample(n, &mut rng);
    let (lo, hi, cells) = (-4.0, 4.0, 50);
    let w = (hi - lo) / cells as f64;
    let mut counts = vec![0.0; cells * cells];
    let mut outside = 0.0;
    for s in &pts {
        let i = ((s.x[0] - lo) / w).floor();
        let j = ((s.x[1] - lo) / w).floor();
        if (0.0..cells as f64).contains(&i) && (0.0..cells as f64).contains(&j) {
            counts[i as usize * cells + j as usize] += 1.0;
        } else {
            outside += 1.0;
        }
    }
    let sub = 10;
    let mut lumped = (outside, 0.0);
    let mut inside_mass = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            let mut mass = 0.0;
            for a in 0..sub {
                for b in 0..sub {
                    let x = lo + w * (i as f64 + (a as f64 + 0.5) / sub as f64);
                    let y = lo + w * (j as f64 + (b as f64 + 0.5) / sub as f64);
                    mass += mog_log_density([x, y], &p).exp();
                }
            }
            mass *= (w / sub as f64).powi(2);
            inside_mass += mass;
            let expected = n as f64 * mass;
            let got = counts[i * cells + j];
            if expected < 5.0 {
                lumped.0 += got;
                lumped.1 += mass;
                continue;
            }
            let sd = (expected * (1.0 - mass)).sqrt();
            assert!((got - expected).abs() < 4.0 * sd, "cell {i},{j}: {got} vs {expected}");
        }
    }
    let tail = lumped.1 + (1.0 - inside_mass);
    let expected = n as f64 * tail;
    let sd = (expected * (1.0 - tail)).sqrt().max(1.0);
    assert!((lumped.0 - expected).abs() < 4.0 * sd, "tail {} vs {expected}", lumped.0);
}

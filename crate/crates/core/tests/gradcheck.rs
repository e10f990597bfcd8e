mod common;

use std::f64::consts::TAU;
use advnf_core::adversarial::{adv_loss, draw, rkl_loss, Discriminator, DiscInput};
use advnf_core::flow::{project_sigmoid, project_tan, Projection};
use advnf_core::lattice::{energy_and_gradient, BoltzmannTarget, LatticeCondition};
use advnf_core::{Graph, Tensor};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_matches_central_differences() {
    for (name, stats) in run_catalog(100) {
        assert!(stats.passed(), "{name}: {stats:?}");
    }
}

#[test]
fn matmul_hand_example() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = g.leaf(Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[17.0, 39.0]);
    let s = g.sum_all(c).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap().data(), &[5.0, 6.0, 5.0, 6.0]);
    assert_eq!(g.grad(b).unwrap().data(), &[4.0, 6.0]);
}

#[test]
fn flow_log_prob_parameter_gradients() {
    for seed in 0..3 {
        let s = flow_log_prob_check(Projection::None, seed);
        assert!(s.passed(), "euclidean flow seed {seed}: {s:?}");
        let s = flow_log_prob_check(Projection::Sigmoid { alpha: 1e-4 }, seed);
        assert!(s.passed(), "sigmoid flow seed {seed}: {s:?}");
    }
}

#[test]
fn ten_layer_flow_is_invertible() {
    let err = invertibility_error(1000, 3);
    assert!(err < 1e-8, "max error {err}");
}

#[test]
fn repeated_forward_passes_are_identical() {
    let flow = random_flow(4, 10, Projection::None, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = flow.sample_base(64, &mut rng);
    let cond = flow.cond_batch(&[1.0], 64).unwrap();
    assert_eq!(flow.forward(&z, &cond).unwrap(), flow.forward(&z, &cond).unwrap());
}

#[test]
fn coupling_log_det_matches_numerical_jacobian() {
    let flow = random_flow(4, 4, Projection::None, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cond = flow.cond_batch(&[0.8], 1).unwrap();
    for _ in 0..20 {
        let z = uniform(&[1, 4], -2.0, 2.0, &mut rng);
        let (_, ld) = flow.forward(&z, &cond).unwrap();
        let mut jac = [[0.0; 4]; 4];
        for j in 0..4 {
            let mut zp = z.clone();
            zp.data_mut()[j] += H;
            let mut zm = z.clone();
            zm.data_mut()[j] -= H;
            let (xp, _) = flow.forward(&zp, &cond).unwrap();
            let (xm, _) = flow.forward(&zm, &cond).unwrap();
            for i in 0..4 {
                jac[i][j] = (xp.data()[i] - xm.data()[i]) / (2.0 * H);
            }
        }
        let det = det4(jac);
        let numeric = det.abs().ln();
        assert!((numeric - ld[0]).abs() <= 1e-4 * ld[0].abs().max(1.0), "{numeric} vs {}", ld[0]);
    }
}

fn det4(m: [[f64; 4]; 4]) -> f64 {
    let mut a = m;
    let mut det = 1.0;
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..4 {
            let f = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

#[test]
fn projection_log_jacobians_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let theta = rng.gen_range(0.01..6.27);
        for f in [project_sigmoid, project_tan] {
            let (_, lj) = f(theta, 1e-4).unwrap();
            let (xp, _) = f(theta + H, 1e-4).unwrap();
            let (xm, _) = f(theta - H, 1e-4).unwrap();
            let numeric = ((xp - xm) / (2.0 * H)).ln();
            assert!((numeric - lj).abs() < 1e-4 * lj.abs().max(1.0), "{numeric} vs {lj}");
        }
    }
}

#[test]
fn lattice_energy_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for &(j, k) in &[(1.0, 0.0), (1.0, 0.5), (-0.3, 1.2)] {
        for n in [3, 4, 5] {
            let x: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..TAU)).collect();
            let mut grad = vec![0.0; n * n];
            energy_and_gradient(&x, n, j, k, &mut grad);
            let mut scratch = vec![0.0; n * n];
            let mut stats = CheckStats::default();
            for i in 0..n * n {
                let mut xp = x.clone();
                xp[i] += H;
                let mut xm = x.clone();
                xm[i] -= H;
                let ep = energy_and_gradient(&xp, n, j, k, &mut scratch);
                let em = energy_and_gradient(&xm, n, j, k, &mut scratch);
                stats.record(grad[i], (ep - em) / (2.0 * H), REL_TOL);
            }
            assert!(stats.passed(), "n {n} j {j} k {k}: {stats:?}");
        }
    }
}

#[test]
fn reverse_kl_gradient_with_fixed_base_draws() {
    let flow = random_flow(9, 3, Projection::Sigmoid { alpha: 1e-4 }, 4);
    let target = BoltzmannTarget::new(3, LatticeCondition::xy(1.3).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = flow.sample_base(16, &mut rng);
    let s = check_params(flow.params(), 1e-3, |g, p| {
        let cv = g.constant(flow.cond_batch(&[1.3], 16)?);
        let d = draw(&flow, g, p, &z, cv)?;
        Ok(rkl_loss(g, d, &target)?.loss)
    });
    assert!(s.passed(), "{s:?}");
}

#[test]
fn discriminator_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for input in [DiscInput::Raw, DiscInput::Angles] {
        let mut disc = Discriminator::new(3, 1, &[6, 5], input, &mut rng);
        randomize(disc.params_mut(), 0.6, &mut rng);
        let real = uniform(&[5, 3], 0.0, 6.0, &mut rng);
        let fake = uniform(&[4, 3], 0.0, 6.0, &mut rng);
        let s = check_params(disc.params(), REL_TOL, |g, p| {
            let r = g.constant(real.clone());
            let f = g.constant(fake.clone());
            let cr = g.constant(Tensor::full(&[5, 1], 0.7));
            let cf = g.constant(Tensor::full(&[4, 1], 0.7));
            adv_loss(&disc, g, p, r, f, cr, cf)
        });
        assert!(s.passed(), "{input:?}: {s:?}");
    }
}

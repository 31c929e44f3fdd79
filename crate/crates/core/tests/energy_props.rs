mod common;

use lingrow::constraints::{hull_violation, ConvexSet};
use lingrow::density::ScalarDensity;
use lingrow::energy::Fidelity;
use lingrow::field::{divergence, gradient, lp_distance};
use lingrow::solver::{minimize, Init, SolverConfig};
use lingrow::{EnergyModel, ImageField, JacobianField};
use proptest::prelude::*;

fn models() -> Vec<EnergyModel> {
    vec![
        EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 1.5 }, 1.0),
        EnergyModel::isotropic(ScalarDensity::ScaledPhiMu { mu: 16.0 }, 4.0).with_delta(0.05),
        EnergyModel::isotropic(ScalarDensity::PseudoHuber { eps: 0.05 }, 2.0),
        EnergyModel::anisotropic(ScalarDensity::PhiMu { mu: 2.0 }, 1e-3, 1.0),
        EnergyModel::anisotropic(ScalarDensity::Linear, 1e-2, 3.0),
        EnergyModel::blend(
            ScalarDensity::PhiMu { mu: 1.5 },
            ScalarDensity::PseudoHuber { eps: 0.1 },
            ImageField::random_uniform(5, 6, 1, 0.0, 1.0, 9),
            2.0,
        ),
    ]
}

#[test]
fn objective_is_midpoint_convex_with_fidelity_margin() {
    for (idx, model) in models().into_iter().enumerate() {
        let f = ImageField::random_uniform(5, 6, 3, 0.0, 1.0, idx as u64);
        for pair in 0..100u64 {
            let u = ImageField::random_uniform(5, 6, 3, -1.0, 2.0, 1000 + 2 * pair);
            let v = ImageField::random_uniform(5, 6, 3, -1.0, 2.0, 1001 + 2 * pair);
            let mid = u.add_scaled(1.0, &v).scaled(0.5);
            let diff = u.add_scaled(-1.0, &v);
            let avg = 0.5 * (model.value(&u, &f).unwrap() + model.value(&v, &f).unwrap());
            let at_mid = model.value(&mid, &f).unwrap();
            let margin = model.lambda / 8.0 * diff.dot_avg(&diff);
            assert!(at_mid <= avg - margin + 1e-12 * (1.0 + avg), "model {idx}");
        }
    }
}

#[test]
fn non_quadratic_fidelities_keep_convexity() {
    for fidelity in [Fidelity::PseudoHuber { eps: 0.1 }, Fidelity::Power { p: 1.5 }] {
        let model = EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 1.5 }, 1.0).with_fidelity(fidelity);
        let f = ImageField::random_uniform(4, 4, 2, 0.0, 1.0, 1);
        for pair in 0..100u64 {
            let u = ImageField::random_uniform(4, 4, 2, -1.0, 2.0, 50 + 2 * pair);
            let v = ImageField::random_uniform(4, 4, 2, -1.0, 2.0, 51 + 2 * pair);
            let mid = u.add_scaled(1.0, &v).scaled(0.5);
            let avg = 0.5 * (model.value(&u, &f).unwrap() + model.value(&v, &f).unwrap());
            assert!(model.value(&mid, &f).unwrap() <= avg + 1e-10);
        }
    }
}

fn dyadic_field(h: usize, w: usize, n: usize) -> impl Strategy<Value = ImageField> {
    prop::collection::vec(-1024i32..1024, h * w * n)
        .prop_map(move |v| ImageField::new(h, w, n, v.into_iter().map(|x| f64::from(x) / 1024.0).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // Dyadic entries and small integer weights keep every operation exact.
    #[test]
    fn gradient_is_linear(u in dyadic_field(4, 5, 3), v in dyadic_field(4, 5, 3), a in -8i32..8, b in -8i32..8) {
        let (a, b) = (f64::from(a), f64::from(b));
        let combined = gradient(&u.scaled(a).add_scaled(b, &v));
        let gu = gradient(&u);
        let gv = gradient(&v);
        let expected: Vec<f64> = gu.as_slice().iter().zip(gv.as_slice()).map(|(x, y)| a * x + b * y).collect();
        prop_assert_eq!(combined.as_slice(), &expected[..]);
    }

    #[test]
    fn adjointness(u in dyadic_field(3, 6, 2), seed in any::<u64>()) {
        let p = JacobianField::random_uniform(3, 6, 2, -1.0, 1.0, seed);
        let lhs = gradient(&u).dot(&p);
        let rhs = -u.dot(&divergence(&p));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }
}

#[test]
fn both_initializations_reach_the_same_minimizer() {
    let f = ImageField::random_uniform(16, 16, 3, 0.0, 1.0, 21);
    let grad_tol = 1e-8;
    for model in [
        EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 1.5 }, 1.0),
        EnergyModel::anisotropic(ScalarDensity::ScaledPhiMu { mu: 4.0 }, 1e-3, 2.0),
    ] {
        let cfg = SolverConfig::default().with_grad_tol(grad_tol);
        let (a, _) = minimize(&model, &f, &cfg).unwrap();
        let (b, _) = minimize(&model, &f, &cfg.clone().with_init(Init::Zero)).unwrap();
        let d = lp_distance(&a, &b, 2.0).unwrap();
        assert!(d <= 10.0 * grad_tol / model.lambda, "distance {d}");
    }
}

#[test]
fn restarting_at_the_minimizer_changes_nothing() {
    let f = common::noisy_scene(12, 12, 0.1, 2);
    let model = EnergyModel::isotropic(ScalarDensity::PseudoHuber { eps: 0.1 }, 5.0);
    let cfg = SolverConfig {
        energy_tol: Some(1e-12),
        ..SolverConfig::default().with_grad_tol(1e-9)
    };
    let (u, first) = minimize(&model, &f, &cfg).unwrap();
    let (_, second) = minimize(&model, &f, &cfg.clone().with_init(Init::Custom(u))).unwrap();
    assert!(first.final_energy - second.final_energy <= 1e-12 * first.final_energy.abs());
    assert!(second.iterations <= 1);
}

#[test]
fn hull_violation_shrinks_with_tolerance() {
    let f = ImageField::random_uniform(24, 24, 3, 0.2, 0.8, 8);
    let model = EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 1.5 }, 1.0);
    let set = ConvexSet::Box {
        lo: vec![0.2; 3],
        hi: vec![0.8; 3],
    };
    let mut previous = f64::INFINITY;
    for tol in [1e-4, 1e-6, 1e-8] {
        let cfg = SolverConfig::default().with_grad_tol(tol).with_init(Init::Zero);
        let (u, _) = minimize(&model, &f, &cfg).unwrap();
        let v = hull_violation(&set, &u).unwrap();
        assert!(v <= previous, "{tol}: {v} > {previous}");
        previous = v;
    }
    assert!(previous <= 1e-3);
}

#[test]
fn hull_of_ball_and_psd_data() {
    // Data inside a ball stay inside; 2×2 PSD-valued data stay PSD.
    let ball = ConvexSet::Ball {
        center: vec![0.5, 0.5, 0.5],
        radius: 0.3,
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
    let samples: Vec<Vec<f64>> = (0..100).map(|_| ball.sample_member(&mut rng)).collect();
    let f = ImageField::from_fn(10, 10, 3, |i, j, k| samples[i * 10 + j][k]);
    let model = EnergyModel::isotropic(ScalarDensity::PhiMu { mu: 2.0 }, 1.0);
    let (u, _) = minimize(&model, &f, &SolverConfig::default().with_grad_tol(1e-9)).unwrap();
    assert!(hull_violation(&ball, &u).unwrap() <= 1e-6);

    let psd = ConvexSet::PsdCone { m: 2, alpha: 0.0 };
    let samples: Vec<Vec<f64>> = (0..100).map(|_| psd.sample_member(&mut rng)).collect();
    let f = ImageField::from_fn(10, 10, 4, |i, j, k| samples[i * 10 + j][k]);
    let (u, _) = minimize(&model, &f, &SolverConfig::default().with_grad_tol(1e-9)).unwrap();
    assert!(hull_violation(&psd, &u).unwrap() <= 1e-6);
}

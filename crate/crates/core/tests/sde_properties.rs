mod common;

use std::sync::Arc;

use common::*;
use dbmt_core::covariance::CovarianceOperator;
use dbmt_core::sde::{BetaSchedule, SdeKind, SdeSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn schedules() -> [BetaSchedule; 3] {
    [
        BetaSchedule::Constant(1.7),
        BetaSchedule::LinearVp {
            beta_min: 0.1,
            beta_max: 20.0,
        },
        BetaSchedule::GeometricVe {
            sigma_min: 0.01,
            sigma_max: 5.0,
        },
    ]
}

fn kinds() -> [SdeKind; 3] {
    [
        SdeKind::BrownianMotion,
        SdeKind::OrnsteinUhlenbeck { alpha: -0.5 },
        SdeKind::OrnsteinUhlenbeck { alpha: 0.3 },
    ]
}

fn scalar_sde(kind: SdeKind, schedule: BetaSchedule) -> SdeSpec {
    SdeSpec::new(kind, schedule, Arc::new(CovarianceOperator::identity(1)), 1.0).unwrap()
}

#[test]
fn gauss_legendre_integrates_polynomials_and_exponentials() {
    let p = integrate(|x| 3.0 * x.powi(5) - x.powi(2), -1.0, 2.0, 1);
    assert!((p - 28.5).abs() < 1e-12);
    let e = integrate(|x| (7.0 * x).exp(), 0.0, 1.0, 4);
    assert!((e - 7f64.exp_m1() / 7.0).abs() < 1e-12 * e);
}

#[test]
fn closed_form_b_matches_quadrature() {
    for schedule in schedules() {
        let sde = scalar_sde(SdeKind::BrownianMotion, schedule);
        let o = Oracle::new(
            SdeKind::BrownianMotion,
            schedule,
            nalgebra::DMatrix::identity(1, 1),
            1.0,
        );
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            let (got, want) = (sde.b(t).unwrap(), o.b(t));
            assert!(
                (got - want).abs() <= 1e-10 * want.max(1.0),
                "{schedule:?} t={t}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn transition_coefficients_match_quadrature() {
    for schedule in schedules() {
        for kind in kinds() {
            let sde = scalar_sde(kind, schedule);
            let o = Oracle::new(kind, schedule, nalgebra::DMatrix::identity(1, 1), 1.0);
            for (t, t2) in [(0.0, 0.3), (0.2, 0.9), (0.5, 1.0), (0.0, 1.0)] {
                let p = sde.transition_params(t, t2).unwrap();
                let (a, v) = o.av(t, t2);
                assert!((p.a - a).abs() <= 1e-10 * a.max(1.0), "{kind:?} {schedule:?}");
                assert!(
                    (p.v - v).abs() <= 1e-10 * v.max(1.0),
                    "{kind:?} {schedule:?}: {} vs {v}",
                    p.v
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn chapman_kolmogorov_composition(
        s in 0usize..3,
        k in 0usize..3,
        mut ts in prop::array::uniform3(0.0f64..1.0),
    ) {
        ts.sort_by(f64::total_cmp);
        let sde = scalar_sde(kinds()[k], schedules()[s]);
        let p1 = sde.transition_params(ts[0], ts[1]).unwrap();
        let p2 = sde.transition_params(ts[1], ts[2]).unwrap();
        let p = sde.transition_params(ts[0], ts[2]).unwrap();
        prop_assert!((p.a - p1.a * p2.a).abs() <= 1e-10 * p.a.max(1.0));
        let v = p1.v * p2.a * p2.a + p2.v;
        prop_assert!((p.v - v).abs() <= 1e-10 * p.v.max(1.0));
    }

    #[test]
    fn bridge_mean_interpolates_endpoints(s in 0usize..3, k in 0usize..3, t in 0.001f64..0.999) {
        let sde = scalar_sde(kinds()[k], schedules()[s]);
        let p = sde.bridge_params(t).unwrap();
        prop_assert!(p.v > 0.0 && p.a_under >= 0.0 && p.a_over >= 0.0);
        // Posterior variance never exceeds either one-sided variance.
        let head = sde.transition_params(0.0, t).unwrap();
        prop_assert!(p.v <= head.v * (1.0 + 1e-12));
    }
}

#[test]
fn log_densities_match_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (i, schedule) in schedules().into_iter().enumerate() {
        let kind = kinds()[i];
        let o = Oracle::new(kind, schedule, random_spd(3, &mut rng), 1.0);
        let sde = o.spec();
        for _ in 0..10 {
            let (x, y, z) = (
                normal_vec(3, 1.0, &mut rng),
                normal_vec(3, 1.0, &mut rng),
                normal_vec(3, 1.0, &mut rng),
            );
            let got = sde.transition_logdensity(&x, &y, 0.2, 0.7).unwrap();
            assert!((got - o.transition_logpdf(&x, &y, 0.2, 0.7)).abs() < 1e-9);
            let got = sde.bridge_logdensity(&x, &y, &z, 0.4).unwrap();
            assert!((got - o.bridge_logpdf(&x, &y, &z, 0.4)).abs() < 1e-9);
        }
    }
}

#[test]
fn brownian_bridge_midpoint_moments() {
    // x0 = 0, x1 = 2, t = 0.5: mean 1, variance 1/4.
    let sde = SdeSpec::brownian(1, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let xs: Vec<f64> = (0..n)
        .map(|_| sde.sample_bridge_point(&[0.0], &[2.0], 0.5, &mut rng).unwrap()[0])
        .collect();
    let (mean, se) = mean_se(&xs);
    assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean}");
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se_var = var * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((var - 0.25).abs() <= 3.0 * se_var, "var {var}");
}

#[test]
fn transition_samples_have_dense_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let gamma = random_spd(3, &mut rng);
    let o = Oracle::new(
        SdeKind::OrnsteinUhlenbeck { alpha: -1.0 },
        BetaSchedule::Constant(1.0),
        gamma.clone(),
        1.0,
    );
    let sde = o.spec();
    let x0 = [1.0, -1.0, 0.5];
    let (a, v) = o.av(0.0, 0.6);
    let n = 100_000;
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|_| sde.sample_transition(&x0, 0.0, 0.6, &mut rng).unwrap())
        .collect();
    for i in 0..3 {
        for j in 0..3 {
            let prods: Vec<f64> = samples
                .iter()
                .map(|s| (s[i] - a * x0[i]) * (s[j] - a * x0[j]))
                .collect();
            let (c, se) = mean_se(&prods);
            assert!(
                (c - v * gamma[(i, j)]).abs() <= 4.0 * se,
                "({i},{j}): {c} vs {}",
                v * gamma[(i, j)]
            );
        }
    }
}

#[test]
fn ou_transition_from_fixed_start() {
    // alpha = -1, beta = 1, x0 = 2 to t = 1: mean 2 / e, variance (1 - e^-2) / 2.
    let sde = scalar_sde(SdeKind::OrnsteinUhlenbeck { alpha: -1.0 }, BetaSchedule::Constant(1.0));
    let p = sde.transition_params(0.0, 1.0).unwrap();
    assert!((2.0 * p.a - 2.0 * (-1f64).exp()).abs() < 1e-15);
    assert!((p.v - 0.5 * (1.0 - (-2f64).exp())).abs() < 1e-15);
}

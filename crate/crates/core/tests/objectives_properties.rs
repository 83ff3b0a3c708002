mod common;

use std::sync::Arc;

use common::*;
use dbmt_core::objectives::{loss_and_gradient, regularizer_fd, sample_batch, sample_batch_at, LossKind};
use dbmt_core::regressor::{Activation, Mlp, NetSpec};
use dbmt_core::sde::{BetaSchedule, SdeKind, SdeSpec};
use dbmt_core::transport::{Dataset, MixingDistribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup() -> (SdeSpec, MixingDistribution) {
    let o = Oracle::new(
        SdeKind::OrnsteinUhlenbeck { alpha: -0.5 },
        BetaSchedule::LinearVp {
            beta_min: 0.1,
            beta_max: 4.0,
        },
        random_spd(3, &mut ChaCha8Rng::seed_from_u64(1)),
        2.0,
    );
    let data = Dataset::from_rows(&[vec![1.0, 0.0, -1.0], vec![-2.0, 0.5, 0.0], vec![0.0, 0.0, 2.0]]).unwrap();
    let mix = MixingDistribution::DeltaStart {
        x0: vec![0.2, -0.1, 0.0],
        data: Arc::new(data),
    };
    (o.spec(), mix)
}

/// Kolmogorov-Smirnov distance to the uniform law on `[lo, hi]`.
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn batch_times_are_uniform_on_each_interval() {
    let (sde, mix) = setup();
    let tau = sde.tau();
    let t_eps = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 20_000;
    for (kind, lo, hi) in [
        (LossKind::FdDtrt, t_eps, tau),
        (LossKind::CeDtrt, 0.0, tau),
        (LossKind::CeDbmt, 0.0, tau),
        (LossKind::FdDbmt, 0.0, tau - t_eps),
    ] {
        let eps = if kind.is_fd() { t_eps } else { 0.0 };
        let batch = sample_batch(kind, &sde, &mix, n, &mut rng, eps).unwrap();
        assert!(batch.times.iter().all(|&s| s > lo && s <= hi), "{kind:?}");
        // 0.1% critical value of the one-sample KS statistic.
        let d = ks_uniform(batch.times.clone(), lo, hi);
        assert!(d < 1.95 / (n as f64).sqrt(), "{kind:?}: KS {d}");
    }
}

#[test]
fn regularizer_normalizes_the_expected_target_norm() {
    let (sde, mix) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    for (kind, s) in [(LossKind::FdDbmt, 0.7), (LossKind::FdDtrt, 0.9)] {
        let batch = sample_batch_at(kind, &sde, &mix, &vec![s; n], &mut rng).unwrap();
        let vals: Vec<f64> = (0..n)
            .map(|b| batch.reg_weights[b] * batch.target(b).iter().map(|v| v * v).sum::<f64>())
            .collect();
        let (m, _) = mean_se(&vals);
        assert!((m - 1.0).abs() < 0.01, "{kind:?}: {m}");
        assert_eq!(batch.reg_weights[0], regularizer_fd(kind, &sde, s).unwrap());
    }
}

#[test]
fn constant_regressor_has_zero_bias_gradient_at_the_target_mean() {
    let (sde, mix) = setup();
    let batch = sample_batch(LossKind::CeDbmt, &sde, &mix, 64, &mut ChaCha8Rng::seed_from_u64(4), 0.0).unwrap();
    let spec = NetSpec {
        dim: 3,
        hidden: vec![],
        activation: Activation::Tanh,
        time_features: 0,
        tau: sde.tau(),
    };
    // Layout: 3 x 4 weights (inputs x and t / tau), then 3 biases.
    let mut params = vec![0.0; spec.param_count()];
    for d in 0..3 {
        let mean = (0..batch.len()).map(|b| batch.target(b)[d]).sum::<f64>() / batch.len() as f64;
        params[12 + d] = mean;
    }
    let net = Mlp::from_params(spec, params).unwrap();
    let (_, grad) = loss_and_gradient(&batch, &net).unwrap();
    assert!(grad[12..].iter().all(|g| g.abs() < 1e-12), "{:?}", &grad[12..]);
}

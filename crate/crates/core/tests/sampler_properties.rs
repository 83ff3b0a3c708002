mod common;

use std::sync::Arc;

use common::*;
use dbmt_core::sampler::{
    estimate_transition_matrix, simulate_dtrt_forward, simulate_paths, simulate_paths_seq, EulerConfig, InitialLaw,
    RecordFlags, ATOM_TOLERANCE,
};
use dbmt_core::sde::{BetaSchedule, SdeKind, SdeSpec};
use dbmt_core::transport::{Dataset, DriftField, MixingDistribution};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn delta_field(atoms: &[f64]) -> DriftField {
    DriftField::exact_dbmt(
        SdeSpec::brownian(1, 1.0).unwrap(),
        MixingDistribution::DeltaStart {
            x0: vec![0.0],
            data: Arc::new(Dataset::scalars(atoms).unwrap()),
        },
    )
    .unwrap()
}

fn vp_ou(tau: f64) -> Oracle {
    Oracle::new(
        SdeKind::OrnsteinUhlenbeck { alpha: -0.5 },
        BetaSchedule::LinearVp {
            beta_min: 0.1,
            beta_max: 12.0,
        },
        DMatrix::from_element(1, 1, 1.0),
        tau,
    )
}

#[test]
fn euler_terminal_mean_approaches_the_data_mean() {
    let field = delta_field(&[-2.0, 0.0, 3.0]);
    let init = InitialLaw::Fixed(vec![0.0]);
    let mut errs = Vec::new();
    for steps in [8, 32, 128] {
        let paths = simulate_paths(&field, &init, &EulerConfig::new(steps), 100_000, 7).unwrap();
        let xs: Vec<f64> = paths.iter().map(|p| p.terminal[0]).collect();
        let (m, se) = mean_se(&xs);
        println!("T = {steps}: mean {m:.5} (se {se:.5})");
        errs.push(((m - 1.0 / 3.0).abs(), se));
    }
    // Each refinement is better, beyond the MC noise of both estimates.
    for w in errs.windows(2) {
        assert!(w[1].0 < w[0].0 + 3.0 * w[1].1, "{errs:?}");
    }
    assert!(errs[2].0 < 4.0 * errs[2].1, "{errs:?}");
}

#[test]
fn noising_paths_have_the_transition_moments() {
    let o = vp_ou(1.0);
    let sde = o.spec();
    let data = Dataset::scalars(&[-1.0, 0.5, 2.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 50_000;
    let k = 5;
    let mut mid = Vec::with_capacity(n);
    let mut starts = Vec::with_capacity(n);
    for _ in 0..n {
        let tr = simulate_dtrt_forward(&sde, &data, 10, &mut rng).unwrap();
        mid.push(tr.states.as_ref().unwrap()[k]);
        starts.push(tr.start[0]);
    }
    let (a, v) = o.av(0.0, 0.5);
    let mean_data = data.mean()[0];
    let var_data = [-1.0f64, 0.5, 2.0].iter().map(|x| (x - mean_data).powi(2)).sum::<f64>() / 3.0;
    let (m, se) = mean_se(&mid);
    assert!((m - a * mean_data).abs() < 4.0 * se, "mean {m} vs {}", a * mean_data);
    let sq: Vec<f64> = mid.iter().map(|x| (x - a * mean_data).powi(2)).collect();
    let (var, se_var) = mean_se(&sq);
    let target = a * a * var_data + v;
    assert!((var - target).abs() < 4.0 * se_var, "var {var} vs {target}");
}

#[test]
fn reversal_from_the_noised_law_recovers_the_atoms() {
    let o = vp_ou(1.0);
    let data = Arc::new(Dataset::toy());
    let field = DriftField::exact_dtrt(o.spec(), data.clone()).unwrap();
    let init = InitialLaw::ForwardTerminal(data.clone());
    let paths = simulate_paths(&field, &init, &EulerConfig::new(500), 10_000, 3).unwrap();
    let mut counts = [0usize; 3];
    let mut lost = 0;
    for p in &paths {
        match data.rows().position(|a| (a[0] - p.terminal[0]).abs() <= ATOM_TOLERANCE) {
            Some(i) => counts[i] += 1,
            None => lost += 1,
        }
    }
    let n = paths.len() as f64;
    let shares: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    assert!(
        shares.iter().all(|s| (s - 1.0 / 3.0).abs() < 0.02),
        "{shares:?}, {lost} unassigned"
    );
}

#[test]
fn scheduling_does_not_change_the_paths() {
    let mix = MixingDistribution::EmpiricalStart {
        starts: Arc::new(Dataset::toy()),
        data: Arc::new(Dataset::toy()),
    };
    let field = DriftField::exact_dbmt(SdeSpec::brownian(1, 1.0).unwrap(), mix.clone()).unwrap();
    let init = InitialLaw::Coupling(mix);
    let cfg = EulerConfig {
        steps: 64,
        record: RecordFlags::all(),
        zero_noise: false,
    };
    let a = simulate_paths(&field, &init, &cfg, 200, 5).unwrap();
    let b = simulate_paths_seq(&field, &init, &cfg, 200, 5).unwrap();
    assert_eq!(a, b);
    #[cfg(feature = "parallel")]
    assert_eq!(
        a,
        dbmt_core::sampler::simulate_paths_par(&field, &init, &cfg, 200, 5).unwrap()
    );
    let m = estimate_transition_matrix(&a, &Dataset::toy(), ATOM_TOLERANCE);
    assert_eq!(m.total, 200);
}

//! Euler-Maruyama integration of transport SDEs and path statistics.

use std::sync::Arc;

use rand::Rng;

use crate::covariance::NoiseSampler;
use crate::error::{Error, Result};
use crate::parallel::{collect_ordered, map_indexed, map_indexed_seq, stream_rng};
use crate::sde::SdeSpec;
use crate::transport::{sample_coupling, Dataset, DriftField, MixingDistribution};

/// Law of `X_0`.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    Fixed(Vec<f64>),
    /// Start marginal of a coupling.
    Coupling(MixingDistribution),
    /// `N(0, scale Gamma)`.
    Gaussian {
        scale: f64,
    },
    /// The noising process at `r = tau`, started from the data: the natural
    /// start of a time reversal.
    ForwardTerminal(Arc<Dataset>),
}

impl InitialLaw {
    pub fn sample<R: Rng + ?Sized>(&self, sde: &SdeSpec, rng: &mut R) -> Result<Vec<f64>> {
        let x = match self {
            InitialLaw::Fixed(x) => x.clone(),
            InitialLaw::Coupling(m) => sample_coupling(m, sde, rng).0,
            InitialLaw::Gaussian { scale } => {
                let mut z = NoiseSampler::new(sde.gamma()).sample(rng);
                z.iter_mut().for_each(|v| *v *= scale.sqrt());
                z
            }
            InitialLaw::ForwardTerminal(data) => {
                let y0 = data.row(rng.random_range(0..data.len()));
                sde.sample_transition(y0, 0.0, sde.tau(), rng)?
            }
        };
        if x.len() != sde.dim() {
            return Err(Error::DimensionMismatch {
                expected: sde.dim(),
                got: x.len(),
            });
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecordFlags {
    pub states: bool,
    pub weights: bool,
    pub denoised: bool,
}

impl RecordFlags {
    pub fn all() -> Self {
        Self {
            states: true,
            weights: true,
            denoised: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerConfig {
    pub steps: usize,
    pub record: RecordFlags,
    /// Drops the Brownian increments; for testing the drift alone.
    pub zero_noise: bool,
}

impl EulerConfig {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            record: RecordFlags::default(),
            zero_noise: false,
        }
    }
}

/// A discretized path on the uniform grid `t_k = k tau / T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub steps: usize,
    pub tau: f64,
    pub start: Vec<f64>,
    pub terminal: Vec<f64>,
    /// `(T + 1) x D`, row-major, when recorded.
    pub states: Option<Vec<f64>>,
    /// `T x N` weights at the left end of each step, when recorded.
    pub weights: Option<Vec<f64>>,
    /// `T x D` denoised expectations at the left end of each step.
    pub denoised: Option<Vec<f64>>,
    /// Denoised expectation at the last drift evaluation.
    pub last_denoised: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

fn uniform_grid(tau: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| tau * k as f64 / steps as f64).collect()
}

impl Trajectory {
    /// The grid `t_0, ..., t_T`.
    pub fn times(&self) -> Vec<f64> {
        uniform_grid(self.tau, self.steps)
    }
}

/// Explicit Euler with the drift at the left end point:
/// `X <- X + mu(X, t) dt + sqrt(beta dt) E`, `E ~ N(0, Gamma)`.
pub fn euler_sample<R: Rng + ?Sized>(
    field: &DriftField,
    init: &InitialLaw,
    config: &EulerConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    if config.steps == 0 {
        return Err(Error::InvalidParameter("Euler needs at least one step".into()));
    }
    let sde = field.sde();
    let dim = sde.dim();
    let times = uniform_grid(sde.tau(), config.steps);
    let dt = sde.tau() / config.steps as f64;
    let start = init.sample(sde, rng)?;
    let mut x = start.clone();
    let mut noise = NoiseSampler::new(sde.gamma());
    let mut e = vec![0.0; dim];
    let rec = config.record;
    let mut states = rec.states.then(|| {
        let mut v = Vec::with_capacity((config.steps + 1) * dim);
        v.extend_from_slice(&x);
        v
    });
    let mut weights = rec.weights.then(Vec::new);
    let mut denoised = rec.denoised.then(Vec::new);
    let mut last_denoised = None;
    for (k, &t) in times[..config.steps].iter().enumerate() {
        let eval = field.evaluate(&x, t)?;
        if let (Some(buf), Some(w)) = (weights.as_mut(), eval.weights.as_ref()) {
            buf.extend_from_slice(w.as_slice());
        }
        if let (Some(buf), Some(d)) = (denoised.as_mut(), eval.denoised.as_ref()) {
            buf.extend_from_slice(d);
        }
        let g = (field.diffusion_beta(t) * dt).sqrt();
        if config.zero_noise {
            e.iter_mut().for_each(|v| *v = 0.0);
        } else {
            noise.sample_into(rng, &mut e);
        }
        for ((xi, mu), ei) in x.iter_mut().zip(&eval.drift).zip(&e) {
            *xi += mu * dt + g * ei;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        if let Some(s) = states.as_mut() {
            s.extend_from_slice(&x);
        }
        last_denoised = eval.denoised;
    }
    let weights = weights.filter(|w| !w.is_empty());
    let denoised = denoised.filter(|d| !d.is_empty());
    Ok(Trajectory {
        dim,
        steps: config.steps,
        tau: sde.tau(),
        start,
        terminal: x,
        states,
        weights,
        denoised,
        last_denoised,
        seed: None,
    })
}

fn one_path(field: &DriftField, init: &InitialLaw, config: &EulerConfig, seed: u64, i: usize) -> Result<Trajectory> {
    let mut rng = stream_rng(seed, i as u64);
    let mut tr = euler_sample(field, init, config, &mut rng)?;
    tr.seed = Some(seed);
    Ok(tr)
}

/// `n` independent paths; path `i` uses stream `i` of `seed`, so the output
/// does not depend on scheduling. Parallel with the `parallel` feature.
pub fn simulate_paths(
    field: &DriftField,
    init: &InitialLaw,
    config: &EulerConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    collect_ordered(map_indexed(n, |i| one_path(field, init, config, seed, i)))
}

pub fn simulate_paths_seq(
    field: &DriftField,
    init: &InitialLaw,
    config: &EulerConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    collect_ordered(map_indexed_seq(n, |i| one_path(field, init, config, seed, i)))
}

#[cfg(feature = "parallel")]
pub fn simulate_paths_par(
    field: &DriftField,
    init: &InitialLaw,
    config: &EulerConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    collect_ordered(crate::parallel::map_indexed_par(n, |i| {
        one_path(field, init, config, seed, i)
    }))
}

/// Exact simulation of the noising process on the uniform grid over
/// `[0, tau]`, started from a uniformly drawn data row.
pub fn simulate_dtrt_forward<R: Rng + ?Sized>(
    sde: &SdeSpec,
    data: &Dataset,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidParameter("need at least one step".into()));
    }
    let times = uniform_grid(sde.tau(), steps);
    let start = data.row(rng.random_range(0..data.len())).to_vec();
    let mut states = Vec::with_capacity((steps + 1) * sde.dim());
    states.extend_from_slice(&start);
    let mut y = start.clone();
    for w in times.windows(2) {
        y = sde.sample_transition(&y, w[0], w[1], rng)?;
        states.extend_from_slice(&y);
    }
    Ok(Trajectory {
        dim: sde.dim(),
        steps,
        tau: sde.tau(),
        start,
        terminal: y,
        states: Some(states),
        weights: None,
        denoised: None,
        last_denoised: None,
        seed: None,
    })
}

/// Euler-Maruyama for the unconditioned SDE `dX = alpha beta_t X dt +
/// sqrt(beta_t) Gamma^{1/2} dW` from `x0` at time 0 to `t_end`.
pub fn euler_forward<R: Rng + ?Sized>(
    sde: &SdeSpec,
    x0: &[f64],
    t_end: f64,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if steps == 0 || !(t_end > 0.0 && t_end <= sde.tau()) {
        return Err(Error::InvalidParameter("need steps >= 1 and 0 < t_end <= tau".into()));
    }
    let dt = t_end / steps as f64;
    let mut x = x0.to_vec();
    let mut noise = NoiseSampler::new(sde.gamma());
    let mut e = vec![0.0; x.len()];
    for k in 0..steps {
        let t = k as f64 * dt;
        let c = sde.drift_coefficient(t);
        let g = (sde.beta_at(t) * dt).sqrt();
        noise.sample_into(rng, &mut e);
        for (xi, ei) in x.iter_mut().zip(&e) {
            *xi += c * *xi * dt + g * ei;
        }
    }
    Ok(x)
}

/// Start-atom by end-atom path counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrixEstimate {
    pub counts: Vec<Vec<u64>>,
    /// `counts / total paths`; the entries sum to one minus the unassigned
    /// share.
    pub joint: Vec<Vec<f64>>,
    /// Each row divided by its own count.
    pub row_normalized: Vec<Vec<f64>>,
    pub unassigned: u64,
    pub total: u64,
    pub tolerance: f64,
}

/// Default nearest-atom tolerance.
pub const ATOM_TOLERANCE: f64 = 0.5;

fn nearest_atom(x: &[f64], atoms: &Dataset, tol: f64) -> Option<usize> {
    atoms
        .rows()
        .map(|a| a.iter().zip(x).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
        .enumerate()
        .filter(|&(_, d)| d <= tol)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

pub fn estimate_transition_matrix(
    trajectories: &[Trajectory],
    atoms: &Dataset,
    tolerance: f64,
) -> TransitionMatrixEstimate {
    let k = atoms.len();
    let mut counts = vec![vec![0u64; k]; k];
    let mut unassigned = 0;
    for tr in trajectories {
        match (
            nearest_atom(&tr.start, atoms, tolerance),
            nearest_atom(&tr.terminal, atoms, tolerance),
        ) {
            (Some(i), Some(j)) => counts[i][j] += 1,
            _ => unassigned += 1,
        }
    }
    let total = trajectories.len() as u64;
    let joint = counts
        .iter()
        .map(|r| r.iter().map(|&c| c as f64 / total.max(1) as f64).collect())
        .collect();
    let row_normalized = counts
        .iter()
        .map(|r| {
            let s: u64 = r.iter().sum();
            r.iter()
                .map(|&c| if s > 0 { c as f64 / s as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    TransitionMatrixEstimate {
        counts,
        joint,
        row_normalized,
        unassigned,
        total,
        tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceOperator;
    use crate::sde::{BetaSchedule, SdeKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn single_atom(atom: f64) -> DriftField {
        DriftField::exact_dbmt(
            SdeSpec::brownian(1, 1.0).unwrap(),
            MixingDistribution::DeltaStart {
                x0: vec![0.0],
                data: Arc::new(Dataset::scalars(&[atom]).unwrap()),
            },
        )
        .unwrap()
    }

    #[test]
    fn one_step_is_atom_plus_noise() {
        let field = single_atom(1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tr = euler_sample(&field, &InitialLaw::Fixed(vec![0.0]), &EulerConfig::new(1), &mut rng).unwrap();
        let mut oracle = ChaCha8Rng::seed_from_u64(3);
        let e: f64 = oracle.sample(StandardNormal);
        assert!((tr.terminal[0] - (1.5 + e)).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_converges_to_the_atom() {
        let field = single_atom(1.5);
        let mut errs = Vec::new();
        for steps in [10, 100, 1000] {
            let mut cfg = EulerConfig::new(steps);
            cfg.zero_noise = true;
            let tr = euler_sample(
                &field,
                &InitialLaw::Fixed(vec![0.3]),
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
            errs.push((tr.terminal[0] - 1.5).abs());
        }
        // The noiseless bridge drift lands on the atom exactly.
        assert!(errs.iter().all(|&e| e < 1e-12), "{errs:?}");
    }

    #[test]
    fn records_have_the_right_shapes() {
        let field = DriftField::exact_dbmt(
            SdeSpec::brownian(1, 1.0).unwrap(),
            MixingDistribution::DeltaStart {
                x0: vec![0.0],
                data: Arc::new(Dataset::scalars(&[-2.0, 0.0, 2.0]).unwrap()),
            },
        )
        .unwrap();
        let cfg = EulerConfig {
            steps: 16,
            record: RecordFlags::all(),
            zero_noise: false,
        };
        let tr = euler_sample(
            &field,
            &InitialLaw::Fixed(vec![0.0]),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(tr.times().len(), 17);
        assert_eq!(tr.states.as_ref().unwrap().len(), 17);
        let w = tr.weights.as_ref().unwrap();
        let d = tr.denoised.as_ref().unwrap();
        assert_eq!(w.len(), 16 * 3);
        for (k, row) in w.chunks(3).enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let e = -2.0 * row[0] + 2.0 * row[2];
            assert!((d[k] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let field = single_atom(1.0);
        let init = InitialLaw::Fixed(vec![0.0]);
        let cfg = EulerConfig::new(32);
        let a = simulate_paths_seq(&field, &init, &cfg, 64, 11).unwrap();
        let b = simulate_paths(&field, &init, &cfg, 64, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transition_matrix_counts() {
        let atoms = Dataset::scalars(&[-2.0, 0.0, 2.0]).unwrap();
        let mk = |s: f64, e: f64| Trajectory {
            dim: 1,
            steps: 1,
            tau: 1.0,
            start: vec![s],
            terminal: vec![e],
            states: None,
            weights: None,
            denoised: None,
            last_denoised: None,
            seed: None,
        };
        let trs = vec![mk(-2.0, -2.1), mk(-2.0, -1.9), mk(0.0, 5.0)];
        let m = estimate_transition_matrix(&trs, &atoms, ATOM_TOLERANCE);
        assert_eq!(m.counts[0], vec![2, 0, 0]);
        assert_eq!(m.unassigned, 1);
        assert_eq!(m.row_normalized[0], vec![1.0, 0.0, 0.0]);
        assert!((m.joint[0][0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn forward_simulation_reaches_the_stationary_law() {
        let sde = SdeSpec::new(
            SdeKind::OrnsteinUhlenbeck { alpha: -0.5 },
            BetaSchedule::LinearVp {
                beta_min: 0.1,
                beta_max: 20.0,
            },
            Arc::new(CovarianceOperator::identity(1)),
            1.0,
        )
        .unwrap();
        let data = Dataset::scalars(&[3.0, 5.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20000;
        let ends: Vec<f64> = (0..n)
            .map(|_| simulate_dtrt_forward(&sde, &data, 10, &mut rng).unwrap().terminal[0])
            .collect();
        let mean = ends.iter().sum::<f64>() / n as f64;
        let var = ends.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // a(0, 1) = exp(-5.025) leaves a mean of 4 * 0.0066 = 0.026.
        let se = (1.0 / n as f64).sqrt();
        let p = sde.transition_params(0.0, 1.0).unwrap();
        assert!((mean - 4.0 * p.a).abs() < 4.0 * se);
        assert!((var - (p.v + p.a * p.a)).abs() < 0.05);
        let single = Dataset::scalars(&[0.25]).unwrap();
        let tr = simulate_dtrt_forward(&sde, &single, 4, &mut rng).unwrap();
        assert_eq!(tr.start, vec![0.25]);
    }

    #[test]
    fn dtrt_drift_is_evaluated_in_reverse_time() {
        let sde = SdeSpec::brownian(1, 1.0).unwrap();
        let field = DriftField::exact_dtrt(sde, Arc::new(Dataset::scalars(&[1.0]).unwrap())).unwrap();
        let mut cfg = EulerConfig::new(500);
        cfg.zero_noise = true;
        let tr = euler_sample(
            &field,
            &InitialLaw::Fixed(vec![-1.0]),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!((tr.terminal[0] - 1.0).abs() < 1e-9);
    }
}

//! One function per subcommand. Each writes its artifacts into
//! `cfg.outputs.dir`; everything except `timing.json` is a pure function of
//! the config.

use std::sync::Arc;
use std::time::Instant;

use dbmt_core::covariance::{
    build_torus_operator_with, embed_plane_operator, empirical_variogram, fit_variogram_wls, wls_objective,
    CirculantOperator, Field, Kernel, VariogramFamily,
};
use dbmt_core::parallel::stream_rng;
use dbmt_core::regressor::{read_checkpoint, train as fit, write_checkpoint, Mlp};
use dbmt_core::sampler::{
    estimate_transition_matrix, simulate_paths, EulerConfig, InitialLaw, RecordFlags, Trajectory,
    TransitionMatrixEstimate, ATOM_TOLERANCE,
};
use dbmt_core::sde::SdeSpec;
use dbmt_core::transport::{
    Dataset, Direction, DriftField, ExactDbmt, LearnedDrift, LearnedTarget, MixingDistribution,
};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::{DriftSource, KernelFamily, NetTarget, RunConfig, StartConfig, TransportKind};
use crate::output::{indexed, write_bytes, write_json, CsvTable};
use crate::CliError;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

fn nearest_atom(x: &[f64], atoms: &Dataset) -> (usize, f64) {
    atoms
        .rows()
        .map(|a| sq_dist(a, x).sqrt())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("datasets are non-empty")
}

/// Half the smallest distance between two atoms, capped at [`ATOM_TOLERANCE`].
fn assignment_radius(atoms: &Dataset) -> f64 {
    let mut r = ATOM_TOLERANCE;
    for (i, a) in atoms.rows().enumerate() {
        for b in atoms.rows().skip(i + 1) {
            r = r.min(0.5 * sq_dist(a, b).sqrt());
        }
    }
    r
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

fn check_sampler(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.sampler.steps == 0 || cfg.sampler.paths == 0 {
        return Err(CliError::Config("sampler.steps and sampler.paths must be >= 1".into()));
    }
    Ok(())
}

/// Long-format path table: `path, step, t, x0, ...`.
fn path_table(paths: &[Trajectory], dim: usize) -> CsvTable {
    let mut header = vec!["path".to_string(), "step".into(), "t".into()];
    header.extend(indexed("x", dim));
    let mut table = CsvTable::new(&header);
    for (p, tr) in paths.iter().enumerate() {
        let states = tr.states.as_deref().unwrap_or_default();
        for (k, (t, x)) in tr.times().iter().zip(states.chunks(dim)).enumerate() {
            let mut vals = vec![*t];
            vals.extend_from_slice(x);
            table.row(&[p as u64, k as u64], &vals);
        }
    }
    table
}

// ---------------------------------------------------------------------------
// toy

#[derive(Serialize)]
struct MatrixReport {
    counts: Vec<Vec<u64>>,
    joint: Vec<Vec<f64>>,
    row_normalized: Vec<Vec<f64>>,
    start_shares: Vec<f64>,
    end_shares: Vec<f64>,
    unassigned: u64,
    tolerance: f64,
}

impl From<TransitionMatrixEstimate> for MatrixReport {
    fn from(m: TransitionMatrixEstimate) -> Self {
        let k = m.joint.len();
        Self {
            start_shares: m.joint.iter().map(|r| r.iter().sum()).collect(),
            end_shares: (0..k).map(|j| m.joint.iter().map(|r| r[j]).sum()).collect(),
            counts: m.counts,
            joint: m.joint,
            row_normalized: m.row_normalized,
            unassigned: m.unassigned,
            tolerance: m.tolerance,
        }
    }
}

#[derive(Serialize)]
struct ToyReport {
    atoms: Vec<f64>,
    steps: usize,
    paths: usize,
    seed: u64,
    independent: MatrixReport,
    identity: MatrixReport,
}

pub fn toy(cfg: &RunConfig) -> Result<(), CliError> {
    check_sampler(cfg)?;
    let data = Arc::new(cfg.load_data()?);
    if data.dim() != 1 {
        return Err(CliError::Config(format!(
            "toy needs one-dimensional data, got dimension {}",
            data.dim()
        )));
    }
    let sde = cfg.sde_for(1)?;
    let out = &cfg.outputs.dir;
    let s = &cfg.sampler;
    let couplings = [
        MixingDistribution::EmpiricalStart {
            starts: data.clone(),
            data: data.clone(),
        },
        MixingDistribution::Identity { data: data.clone() },
    ];
    let mut matrices = Vec::new();
    let mut fields = Vec::new();
    for mix in &couplings {
        let field = ExactDbmt::new(sde.clone(), mix.clone()).map_err(CliError::config_from)?;
        let start = Instant::now();
        let paths = simulate_paths(
            &DriftField::ExactDbmt(field.clone()),
            &InitialLaw::Coupling(mix.clone()),
            &EulerConfig::new(s.steps),
            s.paths,
            s.seed,
        )?;
        log::info!("{} paths in {:.1}s", s.paths, start.elapsed().as_secs_f64());
        matrices.push(MatrixReport::from(estimate_transition_matrix(
            &paths,
            &data,
            ATOM_TOLERANCE,
        )));
        fields.push(field);
    }
    let identity = matrices.pop().unwrap();
    let independent = matrices.pop().unwrap();
    write_json(
        &out.join("transition_matrix.json"),
        &ToyReport {
            atoms: data.as_flat().to_vec(),
            steps: s.steps,
            paths: s.paths,
            seed: s.seed,
            independent,
            identity,
        },
    )?;

    // Mixture marginal on the (t, x) grid.
    let tau = sde.tau();
    let mut grid = CsvTable::new(&["t", "x", "independent", "identity"]);
    for t in linspace(0.01, 0.99, 99) {
        for x in linspace(-4.0, 4.0, 401) {
            let dens = fields
                .iter()
                .map(|f| f.marginal_logdensity(&[x], t * tau).map(f64::exp))
                .collect::<Result<Vec<_>, _>>()?;
            grid.labeled_row(&[], &[t * tau, x, dens[0], dens[1]]);
        }
    }
    grid.write(&out.join("marginal_density_grid.csv"))?;

    // A few independent-coupling paths from a fixed start.
    let from = s.record_from.clone().unwrap_or_else(|| vec![0.0]);
    let cfg_rec = EulerConfig {
        steps: s.steps,
        record: RecordFlags {
            states: true,
            ..RecordFlags::default()
        },
        zero_noise: false,
    };
    let shown = simulate_paths(
        &DriftField::ExactDbmt(fields[0].clone()),
        &InitialLaw::Fixed(from),
        &cfg_rec,
        s.recorded_paths,
        s.seed.wrapping_add(1),
    )?;
    path_table(&shown, 1).write(&out.join("sample_paths.csv"))
}

// ---------------------------------------------------------------------------
// inspect-weights

fn exact_field(
    cfg: &RunConfig,
    sde: &SdeSpec,
    data: &Arc<Dataset>,
) -> Result<(DriftField, MixingDistribution), CliError> {
    let mix = cfg.mixing(data.clone())?;
    let field = match cfg.sampler.transport {
        TransportKind::Dbmt => DriftField::exact_dbmt(sde.clone(), mix.clone()),
        TransportKind::Dtrt => DriftField::exact_dtrt(sde.clone(), data.clone()),
    }
    .map_err(CliError::config_from)?;
    Ok((field, mix))
}

fn initial_law(cfg: &RunConfig, mix: MixingDistribution, data: &Arc<Dataset>) -> InitialLaw {
    match cfg.sample.start.unwrap_or(StartConfig::Coupling) {
        StartConfig::Coupling => InitialLaw::Coupling(mix),
        StartConfig::Gaussian { scale } => InitialLaw::Gaussian { scale },
        StartConfig::ForwardTerminal => InitialLaw::ForwardTerminal(data.clone()),
    }
}

#[derive(Serialize)]
struct SweepEntry {
    steps: usize,
    /// Of the recorded path.
    final_max_weight: f64,
    max_weight_sum_error: f64,
    /// Over `paths` paths: distance from `X_tau` to the nearest atom.
    mean_terminal_distance: f64,
    terminal_distance_se: f64,
}

#[derive(Serialize)]
struct InspectReport {
    transport: TransportKind,
    atoms: usize,
    dim: usize,
    paths: usize,
    seed: u64,
    sweep: Vec<SweepEntry>,
}

pub fn inspect_weights(cfg: &RunConfig) -> Result<(), CliError> {
    let data = Arc::new(cfg.load_data()?);
    let (n, dim) = (data.len(), data.dim());
    let sde = cfg.sde_for(dim)?;
    let (field, mix) = exact_field(cfg, &sde, &data)?;
    let init = initial_law(cfg, mix, &data);
    let out = &cfg.outputs.dir;
    let seed = cfg.sampler.seed;
    let ic = &cfg.inspect;
    if ic.sweep.contains(&0) || ic.paths == 0 {
        return Err(CliError::Config(
            "inspect.sweep entries and inspect.paths must be >= 1".into(),
        ));
    }

    let key_header = |prefix: &str, cols: usize| {
        let mut h = vec!["steps".to_string(), "step".into(), "t".into()];
        h.extend(indexed(prefix, cols));
        h
    };
    let mut weights = CsvTable::new(&key_header("w", n));
    let mut denoised = CsvTable::new(&key_header("d", dim));
    let mut states = CsvTable::new(&key_header("x", dim));
    let mut sweep = Vec::new();
    for &steps in &ic.sweep {
        let rec = EulerConfig {
            steps,
            record: RecordFlags::all(),
            zero_noise: false,
        };
        let tr = simulate_paths(&field, &init, &rec, 1, seed)?.remove(0);
        let times = tr.times();
        let w = tr.weights.as_deref().unwrap_or_default();
        let d = tr.denoised.as_deref().unwrap_or_default();
        let x = tr.states.as_deref().unwrap_or_default();
        let mut sum_err: f64 = 0.0;
        let mut final_max = f64::NAN;
        for (k, row) in w.chunks(n).enumerate() {
            weights.row(&[steps as u64, k as u64], &[&[times[k]], row].concat());
            sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
            final_max = row.iter().cloned().fold(0.0, f64::max);
        }
        for (k, row) in d.chunks(dim).enumerate() {
            denoised.row(&[steps as u64, k as u64], &[&[times[k]], row].concat());
        }
        for (k, row) in x.chunks(dim).enumerate() {
            states.row(&[steps as u64, k as u64], &[&[times[k]], row].concat());
        }
        let many = simulate_paths(&field, &init, &EulerConfig::new(steps), ic.paths, seed)?;
        let dists: Vec<f64> = many.iter().map(|p| nearest_atom(&p.terminal, &data).1).collect();
        let m = dists.iter().sum::<f64>() / dists.len() as f64;
        let var = dists.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (dists.len().max(2) - 1) as f64;
        sweep.push(SweepEntry {
            steps,
            final_max_weight: final_max,
            max_weight_sum_error: sum_err,
            mean_terminal_distance: m,
            terminal_distance_se: (var / dists.len() as f64).sqrt(),
        });
    }
    weights.write(&out.join("weights.csv"))?;
    denoised.write(&out.join("denoised.csv"))?;
    states.write(&out.join("states.csv"))?;
    write_json(
        &out.join("inspect_summary.json"),
        &InspectReport {
            transport: cfg.sampler.transport,
            atoms: n,
            dim,
            paths: ic.paths,
            seed,
            sweep,
        },
    )
}

// ---------------------------------------------------------------------------
// train / sample

#[derive(Serialize)]
struct TrainSummary {
    loss: crate::config::LossConfig,
    steps: usize,
    batch_size: usize,
    param_count: usize,
    initial_loss: f64,
    /// Mean over the last 100 steps.
    final_loss: f64,
    checkpoint: &'static str,
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let tc = cfg.training.clone().unwrap_or_default();
    let data = Arc::new(cfg.load_data()?);
    let sde = cfg.sde_for(data.dim())?;
    let mix = cfg.mixing(data.clone())?;
    let spec = tc.net_spec(data.dim(), sde.tau());
    // Initialization draws from its own stream, apart from the batches.
    let mut net = Mlp::random(spec, &mut stream_rng(tc.seed, u64::MAX)).map_err(CliError::config_from)?;
    let start = Instant::now();
    let report = fit(&mut net, &tc.train_config(sde.tau()), &sde, &mix).map_err(|e| match e {
        dbmt_core::Error::InvalidParameter(_) | dbmt_core::Error::DimensionMismatch { .. } => CliError::config_from(e),
        e => CliError::Numerical(e),
    })?;
    log::info!("trained {} steps in {:.1}s", tc.steps, start.elapsed().as_secs_f64());
    let out = &cfg.outputs.dir;
    write_bytes(&out.join("model.ckpt"), |buf| {
        write_checkpoint(&net, buf).map_err(|e| std::io::Error::other(e.to_string()))
    })?;
    let mut curve = CsvTable::new(&["step", "loss"]);
    for (k, l) in report.loss_curve.iter().enumerate() {
        curve.row(&[k as u64], &[*l]);
    }
    curve.write(&out.join("loss_curve.csv"))?;
    let c = &report.loss_curve;
    let tail = &c[c.len().saturating_sub(100)..];
    write_json(
        &out.join("train_report.json"),
        &TrainSummary {
            loss: tc.loss,
            steps: tc.steps,
            batch_size: tc.batch_size,
            param_count: net.param_count(),
            initial_loss: c[0],
            final_loss: tail.iter().sum::<f64>() / tail.len() as f64,
            checkpoint: "model.ckpt",
        },
    )
}

#[derive(Serialize)]
struct SampleSummary {
    transport: TransportKind,
    drift: DriftSource,
    steps: usize,
    paths: usize,
    seed: u64,
    terminal_mean: Vec<f64>,
    /// Share of terminals within the assignment radius of each atom.
    atom_shares: Vec<f64>,
    unassigned_share: f64,
    assignment_radius: f64,
}

pub fn sample(cfg: &RunConfig) -> Result<(), CliError> {
    check_sampler(cfg)?;
    let data = Arc::new(cfg.load_data()?);
    let dim = data.dim();
    let sde = cfg.sde_for(dim)?;
    let (exact, mix) = exact_field(cfg, &sde, &data)?;
    let field = match cfg.sample.drift {
        DriftSource::Exact => exact,
        DriftSource::Checkpoint => {
            let path = cfg
                .sample
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Config("sample.drift = \"checkpoint\" needs sample.checkpoint".into()))?;
            let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
            let net = read_checkpoint(std::io::BufReader::new(file)).map_err(CliError::config_from)?;
            let target = match cfg.sample.target {
                NetTarget::Expectation => LearnedTarget::Expectation,
                NetTarget::Score => LearnedTarget::Score,
            };
            let (direction, start) = match (cfg.sampler.transport, &mix) {
                (TransportKind::Dtrt, _) => (Direction::Dtrt, None),
                (TransportKind::Dbmt, MixingDistribution::DeltaStart { x0, .. }) => (Direction::Dbmt, Some(x0.clone())),
                (TransportKind::Dbmt, _) => (Direction::Dbmt, None),
            };
            let learned = LearnedDrift::new(sde.clone(), Arc::new(net), target, direction, start)
                .map_err(CliError::config_from)?;
            DriftField::Learned(learned)
        }
    };
    let init = initial_law(cfg, mix, &data);
    let s = &cfg.sampler;
    let start = Instant::now();
    let paths = simulate_paths(&field, &init, &EulerConfig::new(s.steps), s.paths, s.seed)?;
    log::info!("{} paths in {:.1}s", s.paths, start.elapsed().as_secs_f64());
    let out = &cfg.outputs.dir;

    let mut header = vec!["path".to_string()];
    header.extend(indexed("start", dim));
    header.extend(indexed("x", dim));
    let mut terminals = CsvTable::new(&header);
    let mut mean = vec![0.0; dim];
    let radius = assignment_radius(&data);
    let mut counts = vec![0u64; data.len()];
    for (p, tr) in paths.iter().enumerate() {
        terminals.row(&[p as u64], &[tr.start.as_slice(), &tr.terminal].concat());
        mean.iter_mut()
            .zip(&tr.terminal)
            .for_each(|(m, x)| *m += x / s.paths as f64);
        let (i, d) = nearest_atom(&tr.terminal, &data);
        if d <= radius {
            counts[i] += 1;
        }
    }
    terminals.write(&out.join("terminals.csv"))?;

    let rec = EulerConfig {
        steps: s.steps,
        record: RecordFlags {
            states: true,
            ..RecordFlags::default()
        },
        zero_noise: false,
    };
    let shown = simulate_paths(&field, &init, &rec, s.recorded_paths.min(s.paths), s.seed)?;
    path_table(&shown, dim).write(&out.join("sample_paths.csv"))?;

    let total = s.paths as f64;
    let shares: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    write_json(
        &out.join("sample_report.json"),
        &SampleSummary {
            transport: s.transport,
            drift: cfg.sample.drift,
            steps: s.steps,
            paths: s.paths,
            seed: s.seed,
            terminal_mean: mean,
            unassigned_share: 1.0 - shares.iter().sum::<f64>(),
            atom_shares: shares,
            assignment_radius: radius,
        },
    )
}

// ---------------------------------------------------------------------------
// gp

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Flavor {
    White,
    Plane,
    Torus,
}

const FLAVORS: [Flavor; 3] = [Flavor::White, Flavor::Plane, Flavor::Torus];

impl Flavor {
    fn name(self) -> &'static str {
        match self {
            Flavor::White => "white",
            Flavor::Plane => "plane",
            Flavor::Torus => "torus",
        }
    }
}

/// A sampler for one flavor on an `n x n` grid.
enum GpSampler {
    White { n: usize, sd: f64 },
    Circulant(CirculantOperator),
}

impl GpSampler {
    fn new(flavor: Flavor, kernel: Kernel, side: usize, max_doublings: usize) -> Result<Self, CliError> {
        Ok(match flavor {
            Flavor::White => GpSampler::White {
                n: side * side,
                sd: kernel.variance().sqrt(),
            },
            Flavor::Plane => GpSampler::Circulant(
                embed_plane_operator(kernel, side, side, 1, max_doublings, false).map_err(CliError::config_from)?,
            ),
            Flavor::Torus => GpSampler::Circulant(
                build_torus_operator_with(kernel, side, side, 1, true).map_err(CliError::config_from)?,
            ),
        })
    }

    /// Appends one or two samples to `out`.
    fn draw<R: Rng>(&self, rng: &mut R, out: &mut Vec<Vec<f64>>) {
        match self {
            GpSampler::White { n, sd } => {
                out.push((0..*n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
            }
            GpSampler::Circulant(op) => {
                let (a, b) = op.sample_pair(rng);
                out.push(a);
                out.push(b);
            }
        }
    }
}

#[derive(Serialize)]
struct TimingEntry {
    side: usize,
    build_seconds: f64,
    /// Best over trials of the mean wall time per sample.
    seconds_per_sample: f64,
}

#[derive(Serialize)]
struct FlavorTiming {
    flavor: Flavor,
    sizes: Vec<TimingEntry>,
    /// Per-sample time of the largest grid over the one with half its side.
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio_last_over_half: Option<f64>,
}

#[derive(Serialize)]
struct FlavorReport {
    flavor: Flavor,
    file: String,
    embedding_shape: Option<(usize, usize)>,
    doublings: Option<usize>,
    clipped_eigenvalues: Option<usize>,
    truncation_frobenius_error: Option<f64>,
    /// Over `moment_samples` draws, pooled across pixels.
    pixel_variance: f64,
    /// Correlation between the first and last grid rows, pooled across columns.
    opposite_edge_correlation: f64,
    /// Same for the first two rows.
    adjacent_row_correlation: f64,
}

#[derive(Serialize)]
struct GpReport {
    kernel: KernelFamily,
    variance: f64,
    length_scale: f64,
    field_size: usize,
    moment_samples: usize,
    seed: u64,
    flavors: Vec<FlavorReport>,
}

const MOMENT_SAMPLES: usize = 400;

fn row_correlation(samples: &[Vec<f64>], side: usize, r1: usize, r2: usize) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for s in samples {
        for j in 0..side {
            let (a, b) = (s[r1 * side + j], s[r2 * side + j]);
            xy += a * b;
            xx += a * a;
            yy += b * b;
        }
    }
    xy / (xx * yy).sqrt()
}

pub fn gp(cfg: &RunConfig) -> Result<(), CliError> {
    let g = &cfg.gp;
    if g.field_size < 2 || g.sizes.iter().any(|&s| s < 2) || g.timing_trials == 0 || g.samples_per_trial == 0 {
        return Err(CliError::Config("gp sizes must be >= 2 and trial counts >= 1".into()));
    }
    let kernel = g.kernel.kernel(g.variance, g.length_scale);
    kernel.validate().map_err(CliError::config_from)?;
    let out = &cfg.outputs.dir;
    let seed = cfg.sampler.seed;
    let side = g.field_size;

    let mut reports = Vec::new();
    for (fi, &flavor) in FLAVORS.iter().enumerate() {
        let sampler = GpSampler::new(flavor, kernel, side, g.max_doublings)?;
        let mut rng = stream_rng(seed, fi as u64);
        let mut samples = Vec::with_capacity(MOMENT_SAMPLES + 1);
        while samples.len() < MOMENT_SAMPLES {
            sampler.draw(&mut rng, &mut samples);
        }
        let field = Field::new(side, side, 1, samples[0].clone()).map_err(CliError::config_from)?;
        let file = format!("gp_{}.csv", flavor.name());
        let path = out.join(&file);
        write_bytes(&path, |buf| field.write_csv(buf))?;
        let n_vals = (samples.len() * side * side) as f64;
        let pixel_variance = samples.iter().flatten().map(|v| v * v).sum::<f64>() / n_vals;
        let op = match &sampler {
            GpSampler::Circulant(op) => Some(op),
            GpSampler::White { .. } => None,
        };
        reports.push(FlavorReport {
            flavor,
            file,
            embedding_shape: op.map(|o| o.embedding_shape()),
            doublings: op.map(|o| o.doublings()),
            clipped_eigenvalues: op.map(|o| o.clipped()),
            truncation_frobenius_error: op.and_then(|o| o.truncation_error()),
            pixel_variance,
            opposite_edge_correlation: row_correlation(&samples, side, 0, side - 1),
            adjacent_row_correlation: row_correlation(&samples, side, 0, 1),
        });
    }
    write_json(
        &out.join("gp_report.json"),
        &GpReport {
            kernel: g.kernel,
            variance: g.variance,
            length_scale: g.length_scale,
            field_size: side,
            moment_samples: MOMENT_SAMPLES,
            seed,
            flavors: reports,
        },
    )?;

    let mut timings = Vec::new();
    for (fi, &flavor) in FLAVORS.iter().enumerate() {
        let mut sizes = Vec::new();
        for &n in &g.sizes {
            let start = Instant::now();
            let sampler = GpSampler::new(flavor, kernel, n, g.max_doublings)?;
            let build_seconds = start.elapsed().as_secs_f64();
            let mut rng = stream_rng(seed, (fi * 1000 + n) as u64);
            let mut buf = Vec::new();
            sampler.draw(&mut rng, &mut buf);
            let mut best = f64::INFINITY;
            for _ in 0..g.timing_trials {
                buf.clear();
                let start = Instant::now();
                while buf.len() < g.samples_per_trial {
                    sampler.draw(&mut rng, &mut buf);
                }
                best = best.min(start.elapsed().as_secs_f64() / buf.len() as f64);
            }
            log::info!("{} {n}x{n}: {:.3e} s/sample", flavor.name(), best);
            sizes.push(TimingEntry {
                side: n,
                build_seconds,
                seconds_per_sample: best,
            });
        }
        let ratio_last_over_half = sizes.last().and_then(|last| {
            sizes
                .iter()
                .find(|e| 2 * e.side == last.side)
                .map(|half| last.seconds_per_sample / half.seconds_per_sample)
        });
        timings.push(FlavorTiming {
            flavor,
            sizes,
            ratio_last_over_half,
        });
    }
    #[derive(Serialize)]
    struct Timing {
        flavors: Vec<FlavorTiming>,
    }
    write_json(&out.join("timing.json"), &Timing { flavors: timings })
}

// ---------------------------------------------------------------------------
// variogram

#[derive(Serialize)]
struct FitRecord {
    sill: f64,
    length_scale: f64,
    objective: f64,
    iterations: Option<usize>,
    at_lower_bound: bool,
    converged: bool,
}

#[derive(Serialize)]
struct ChannelFit {
    channel: usize,
    exponential: FitRecord,
    rbf: FitRecord,
}

#[derive(Serialize)]
struct ImageFit {
    image: String,
    height: usize,
    width: usize,
    channels: Vec<ChannelFit>,
}

#[derive(Serialize)]
struct Medians {
    exponential_length_scale: Option<f64>,
    exponential_sill: Option<f64>,
    rbf_length_scale: Option<f64>,
    rbf_sill: Option<f64>,
}

#[derive(Serialize)]
struct Truth {
    kernel: KernelFamily,
    variance: f64,
    length_scale: f64,
}

#[derive(Serialize)]
struct VariogramReport {
    n_bins: usize,
    max_lag: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    synthetic_truth: Option<Truth>,
    images: Vec<ImageFit>,
    medians: Medians,
    /// Share of channels where the exponential objective is below the RBF one.
    exponential_better_share: f64,
}

fn fit_record(emp: &dbmt_core::covariance::EmpiricalVariogram, family: VariogramFamily) -> Result<FitRecord, CliError> {
    match fit_variogram_wls(emp, family) {
        Ok(f) => Ok(FitRecord {
            sill: f.kernel.variance(),
            length_scale: f.kernel.length_scale().unwrap_or(0.0),
            objective: f.objective,
            iterations: Some(f.iterations),
            at_lower_bound: f.at_lower_bound,
            converged: true,
        }),
        Err(dbmt_core::Error::FitNotConverged { sill, length_scale, .. }) => Ok(FitRecord {
            sill,
            length_scale,
            objective: wls_objective(emp, family, sill, length_scale),
            iterations: None,
            at_lower_bound: false,
            converged: false,
        }),
        Err(e) => Err(CliError::Numerical(e)),
    }
}

/// Named images, plus the generating kernel for a synthetic corpus.
type Corpus = (Vec<(String, Field)>, Option<Truth>);

fn load_images(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let v = &cfg.variogram;
    if !v.images.is_empty() {
        let images = v
            .images
            .iter()
            .map(|p| {
                let file = std::fs::File::open(p).map_err(|e| CliError::io(p, e))?;
                let field =
                    Field::read_csv(std::io::BufReader::new(file), v.channels).map_err(|e| CliError::io(p, e))?;
                Ok((p.display().to_string(), field))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        return Ok((images, None));
    }
    let s = &v.synthetic;
    if s.count == 0 {
        return Err(CliError::Config("variogram.synthetic.count must be >= 1".into()));
    }
    let kernel = s.kernel.kernel(s.variance, s.length_scale);
    let op = embed_plane_operator(kernel, s.side, s.side, v.channels, 3, false).map_err(CliError::config_from)?;
    let images = (0..s.count)
        .map(|i| {
            let x = op.sample_pair(&mut stream_rng(cfg.sampler.seed, i as u64)).0;
            let f = Field::new(s.side, s.side, v.channels, x).map_err(CliError::config_from)?;
            Ok((format!("synthetic_{i}"), f))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let truth = Truth {
        kernel: s.kernel,
        variance: s.variance,
        length_scale: s.length_scale,
    };
    Ok((images, Some(truth)))
}

pub fn variogram(cfg: &RunConfig) -> Result<(), CliError> {
    let v = &cfg.variogram;
    let (images, truth) = load_images(cfg)?;
    let out = &cfg.outputs.dir;
    let mut points = CsvTable::new(&["image", "channel", "lag", "gamma", "count"]);
    let mut curves = CsvTable::new(&["image", "channel", "family", "lag", "gamma"]);
    let curve_lags = linspace(0.0, v.max_lag, 51);
    let mut fits = Vec::new();
    for (name, img) in &images {
        let emps = empirical_variogram(img, v.n_bins, v.max_lag).map_err(CliError::config_from)?;
        let mut channels = Vec::new();
        for (c, emp) in emps.iter().enumerate() {
            let ch = c.to_string();
            for ((lag, g), n) in emp.lags.iter().zip(&emp.gamma).zip(&emp.counts) {
                points.labeled_row(&[name, &ch], &[*lag, *g, *n as f64]);
            }
            let exponential = fit_record(emp, VariogramFamily::Exponential)?;
            let rbf = fit_record(emp, VariogramFamily::Rbf)?;
            for (label, fr, fam) in [
                ("exponential", &exponential, VariogramFamily::Exponential),
                ("rbf", &rbf, VariogramFamily::Rbf),
            ] {
                let k = fam.kernel(fr.sill, fr.length_scale.max(f64::MIN_POSITIVE));
                for &h in &curve_lags {
                    curves.labeled_row(&[name, &ch, label], &[h, k.semivariogram(h)]);
                }
            }
            channels.push(ChannelFit {
                channel: c,
                exponential,
                rbf,
            });
        }
        fits.push(ImageFit {
            image: name.clone(),
            height: img.height(),
            width: img.width(),
            channels,
        });
    }
    let all: Vec<&ChannelFit> = fits.iter().flat_map(|f| &f.channels).collect();
    let pick = |f: fn(&ChannelFit) -> f64| median(all.iter().map(|c| f(c)).collect());
    let better = all.iter().filter(|c| c.exponential.objective < c.rbf.objective).count();
    points.write(&out.join("variogram_points.csv"))?;
    curves.write(&out.join("variogram_curves.csv"))?;
    write_json(
        &out.join("fit_report.json"),
        &VariogramReport {
            n_bins: v.n_bins,
            max_lag: v.max_lag,
            synthetic_truth: truth,
            medians: Medians {
                exponential_length_scale: pick(|c| c.exponential.length_scale),
                exponential_sill: pick(|c| c.exponential.sill),
                rbf_length_scale: pick(|c| c.rbf.length_scale),
                rbf_sill: pick(|c| c.rbf.sill),
            },
            exponential_better_share: better as f64 / all.len().max(1) as f64,
            images: fits,
        },
    )
}

//! Run configuration: a TOML file with one section per concern. Every key
//! has a default, so an empty file (or no file) is a valid toy run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dbmt_core::covariance::{build_torus_operator_with, embed_plane_operator, CovarianceOperator, Kernel};
use dbmt_core::objectives::LossKind;
use dbmt_core::regressor::{Activation, LrSchedule, NetSpec, OptimizerKind, TrainConfig};
use dbmt_core::sde::{BetaSchedule, SdeKind, SdeSpec};
use dbmt_core::transport::{Dataset, MixingDistribution};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sde: SdeConfig,
    /// Toy data for most commands, the rings for `inspect-weights`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    pub coupling: CouplingConfig,
    pub sampler: SamplerConfig,
    pub inspect: InspectConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    pub sample: SampleConfig,
    pub gp: GpConfig,
    pub variogram: VariogramConfig,
    pub outputs: OutputsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Bm,
    Ou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub kind: ProcessKind,
    /// OU rate; ignored for `bm`.
    pub alpha: f64,
    pub tau: f64,
    pub beta: BetaConfig,
    pub gamma: GammaConfig,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            kind: ProcessKind::Bm,
            alpha: -0.5,
            tau: 1.0,
            beta: BetaConfig::Constant { value: 1.0 },
            gamma: GammaConfig::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaConfig {
    Constant { value: f64 },
    LinearVp { beta_min: f64, beta_max: f64 },
    GeometricVe { sigma_min: f64, sigma_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    White,
    Exponential,
    Rbf,
}

impl KernelFamily {
    pub fn kernel(self, variance: f64, length_scale: f64) -> Kernel {
        match self {
            KernelFamily::White => Kernel::white_noise(variance),
            KernelFamily::Exponential => Kernel::exponential(variance, length_scale),
            KernelFamily::Rbf => Kernel::rbf(variance, length_scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedding {
    Plane,
    Torus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaConfig {
    Identity,
    /// Explicit symmetric positive definite matrix, one row per entry.
    Dense {
        rows: Vec<Vec<f64>>,
    },
    /// Stationary field covariance on an `height x width x channels` grid.
    Field {
        kernel: KernelFamily,
        variance: f64,
        length_scale: f64,
        height: usize,
        width: usize,
        channels: usize,
        embedding: Embedding,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    /// `{-2, 0, 2}` in one dimension.
    Toy,
    /// 32 points on two concentric circles in the plane.
    Rings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataConfig {
    Builtin {
        builtin: Builtin,
    },
    /// CSV, one point per line.
    File {
        path: PathBuf,
    },
}

impl DataConfig {
    pub fn load(&self) -> Result<Dataset, CliError> {
        match self {
            DataConfig::Builtin { builtin: Builtin::Toy } => Ok(Dataset::toy()),
            DataConfig::Builtin {
                builtin: Builtin::Rings,
            } => Ok(Dataset::two_rings()),
            DataConfig::File { path } => {
                let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
                Dataset::read_csv(std::io::BufReader::new(file)).map_err(|e| CliError::io(path, e))
            }
        }
    }

    fn make_absolute(&mut self, base: &Path) {
        if let DataConfig::File { path } = self {
            *path = base.join(&*path);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingConfig {
    /// All paths start at `x0` (the origin when omitted).
    DeltaStart {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
    GaussianStart {
        scale: f64,
    },
    Identity,
    /// Start uniform over `starts` (the data when omitted), independent of the end.
    Independent {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        starts: Option<DataConfig>,
    },
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig::DeltaStart { x0: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    Dbmt,
    Dtrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub transport: TransportKind,
    /// Euler steps `T`.
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    /// Paths written out in full.
    pub recorded_paths: usize,
    /// Start of recorded paths; the coupling start when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_from: Option<Vec<f64>>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            transport: TransportKind::Dbmt,
            steps: 1024,
            paths: 20_000,
            seed: 0,
            recorded_paths: 5,
            record_from: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectConfig {
    /// Euler step counts to compare.
    pub sweep: Vec<usize>,
    /// Paths per step count for the terminal-distance summary.
    pub paths: usize,
}

impl Default for InspectConfig {
    fn default() -> Self {
        Self {
            sweep: vec![1000, 100],
            paths: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossConfig {
    FdDtrt,
    FdDbmt,
    CeDbmt,
    CeDtrt,
}

impl From<LossConfig> for LossKind {
    fn from(l: LossConfig) -> Self {
        match l {
            LossConfig::FdDtrt => LossKind::FdDtrt,
            LossConfig::FdDbmt => LossKind::FdDbmt,
            LossConfig::CeDbmt => LossKind::CeDbmt,
            LossConfig::CeDtrt => LossKind::CeDtrt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationConfig {
    Tanh,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleConfig {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub loss: LossConfig,
    pub hidden: Vec<usize>,
    pub activation: ActivationConfig,
    pub time_features: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    /// Smallest time offset for the Fisher-divergence losses; `1e-3 tau` when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_eps: Option<f64>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::CeDbmt,
            hidden: vec![64, 64],
            activation: ActivationConfig::Tanh,
            time_features: 4,
            batch_size: 256,
            steps: 5000,
            learning_rate: 3e-3,
            optimizer: OptimizerConfig::Adam,
            schedule: ScheduleConfig::Cosine,
            t_eps: None,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn net_spec(&self, dim: usize, tau: f64) -> NetSpec {
        NetSpec {
            dim,
            hidden: self.hidden.clone(),
            activation: match self.activation {
                ActivationConfig::Tanh => Activation::Tanh,
                ActivationConfig::Softplus => Activation::Softplus,
            },
            time_features: self.time_features,
            tau,
        }
    }

    pub fn train_config(&self, tau: f64) -> TrainConfig {
        let mut c = TrainConfig::new(self.loss.into(), tau);
        c.batch_size = self.batch_size;
        c.steps = self.steps;
        c.learning_rate = self.learning_rate;
        c.optimizer = match self.optimizer {
            OptimizerConfig::Sgd => OptimizerKind::Sgd,
            OptimizerConfig::Adam => OptimizerKind::adam(),
        };
        c.schedule = match self.schedule {
            ScheduleConfig::Constant => LrSchedule::Constant,
            ScheduleConfig::Cosine => LrSchedule::Cosine,
        };
        if let Some(t_eps) = self.t_eps {
            c.t_eps = t_eps;
        }
        c.seed = self.seed;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSource {
    Exact,
    Checkpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetTarget {
    Expectation,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StartConfig {
    /// The start marginal of the coupling.
    Coupling,
    /// `N(0, scale Gamma)`.
    Gaussian { scale: f64 },
    /// The noising process at `tau` from a random data point.
    ForwardTerminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub drift: DriftSource,
    /// Checkpoint file, relative to the config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub target: NetTarget,
    /// Law of `X_0`; `coupling` for DBMT and `forward_terminal` for DTRT when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<StartConfig>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            drift: DriftSource::Exact,
            checkpoint: None,
            target: NetTarget::Expectation,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub kernel: KernelFamily,
    pub variance: f64,
    pub length_scale: f64,
    /// Grid sides for the timing sweep.
    pub sizes: Vec<usize>,
    /// Side of the emitted sample fields.
    pub field_size: usize,
    pub timing_trials: usize,
    pub samples_per_trial: usize,
    pub max_doublings: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            kernel: KernelFamily::Exponential,
            variance: 0.063,
            length_scale: 0.205,
            sizes: vec![16, 32, 64, 128],
            field_size: 64,
            timing_trials: 5,
            samples_per_trial: 8,
            max_doublings: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpus {
    pub count: usize,
    pub side: usize,
    pub kernel: KernelFamily,
    pub variance: f64,
    pub length_scale: f64,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        Self {
            count: 50,
            side: 32,
            kernel: KernelFamily::Exponential,
            variance: 0.063,
            length_scale: 0.205,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariogramConfig {
    /// Image CSV files (one grid row per line, `W * C` values), relative to
    /// the config file's directory. The synthetic corpus is used when empty.
    pub images: Vec<PathBuf>,
    pub channels: usize,
    pub synthetic: SyntheticCorpus,
    pub n_bins: usize,
    pub max_lag: f64,
}

impl Default for VariogramConfig {
    fn default() -> Self {
        Self {
            images: Vec::new(),
            channels: 1,
            synthetic: SyntheticCorpus::default(),
            n_bins: 16,
            max_lag: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsConfig {
    pub dir: PathBuf,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    fn kind_and_schedule(&self) -> (SdeKind, BetaSchedule) {
        let s = &self.sde;
        let kind = match s.kind {
            ProcessKind::Bm => SdeKind::BrownianMotion,
            ProcessKind::Ou => SdeKind::OrnsteinUhlenbeck { alpha: s.alpha },
        };
        let schedule = match s.beta {
            BetaConfig::Constant { value } => BetaSchedule::Constant(value),
            BetaConfig::LinearVp { beta_min, beta_max } => BetaSchedule::LinearVp { beta_min, beta_max },
            BetaConfig::GeometricVe { sigma_min, sigma_max } => BetaSchedule::GeometricVe { sigma_min, sigma_max },
        };
        (kind, schedule)
    }

    fn gamma_operator(&self, dim: usize) -> Result<CovarianceOperator, CliError> {
        match &self.sde.gamma {
            GammaConfig::Identity => Ok(CovarianceOperator::identity(dim)),
            GammaConfig::Dense { rows } => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(CliError::Config("dense gamma must be square".into()));
                }
                let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                CovarianceOperator::dense(m).map_err(CliError::config_from)
            }
            GammaConfig::Field {
                kernel,
                variance,
                length_scale,
                height,
                width,
                channels,
                embedding,
            } => {
                let k = kernel.kernel(*variance, *length_scale);
                let op = match embedding {
                    Embedding::Plane => embed_plane_operator(k, *height, *width, *channels, 3, false),
                    Embedding::Torus => build_torus_operator_with(k, *height, *width, *channels, true),
                }
                .map_err(CliError::config_from)?;
                Ok(CovarianceOperator::Circulant(op))
            }
        }
    }

    /// The SDE for data of dimension `dim`.
    pub fn sde_for(&self, dim: usize) -> Result<SdeSpec, CliError> {
        let (kind, schedule) = self.kind_and_schedule();
        let gamma = self.gamma_operator(dim)?;
        if gamma.dim() != dim {
            return Err(CliError::Config(format!(
                "gamma has dimension {}, data has dimension {dim}",
                gamma.dim()
            )));
        }
        SdeSpec::new(kind, schedule, Arc::new(gamma), self.sde.tau).map_err(CliError::config_from)
    }

    pub fn make_paths_absolute(&mut self, base: &Path) {
        if let Some(d) = self.data.as_mut() {
            d.make_absolute(base);
        }
        if let CouplingConfig::Independent { starts: Some(s) } = &mut self.coupling {
            s.make_absolute(base);
        }
        if let Some(c) = self.sample.checkpoint.as_mut() {
            *c = base.join(&*c);
        }
        for img in &mut self.variogram.images {
            *img = base.join(&*img);
        }
        self.outputs.dir = base.join(&self.outputs.dir);
    }

    /// Fills the keys whose default depends on the command.
    pub fn apply_command_defaults(&mut self, command: crate::Command) {
        if self.data.is_none() {
            let builtin = match command {
                crate::Command::InspectWeights => Builtin::Rings,
                _ => Builtin::Toy,
            };
            self.data = Some(DataConfig::Builtin { builtin });
        }
        if command == crate::Command::Train && self.training.is_none() {
            self.training = Some(TrainingConfig::default());
        }
        if self.sample.start.is_none() {
            self.sample.start = Some(match self.sampler.transport {
                TransportKind::Dbmt => StartConfig::Coupling,
                TransportKind::Dtrt => StartConfig::ForwardTerminal,
            });
        }
    }

    pub fn load_data(&self) -> Result<Dataset, CliError> {
        match &self.data {
            Some(d) => d.load(),
            None => Ok(Dataset::toy()),
        }
    }

    pub fn mixing(&self, data: Arc<Dataset>) -> Result<MixingDistribution, CliError> {
        let dim = data.dim();
        Ok(match &self.coupling {
            CouplingConfig::DeltaStart { x0 } => MixingDistribution::DeltaStart {
                x0: x0.clone().unwrap_or_else(|| vec![0.0; dim]),
                data,
            },
            CouplingConfig::GaussianStart { scale } => MixingDistribution::GaussianStart { scale: *scale, data },
            CouplingConfig::Identity => MixingDistribution::Identity { data },
            CouplingConfig::Independent { starts } => {
                let starts = match starts {
                    Some(s) => Arc::new(s.load()?),
                    None => data.clone(),
                };
                MixingDistribution::EmpiricalStart { starts, data }
            }
        })
    }
}

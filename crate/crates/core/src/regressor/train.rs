use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mlp, Trace};
use crate::error::{Error, Result};
use crate::objectives::{loss_and_gradient_into, sample_batch, LossKind};
use crate::sde::SdeSpec;
use crate::transport::MixingDistribution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let p = step as f64 / steps.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let n = if matches!(kind, OptimizerKind::Adam { .. }) {
            n_params
        } else {
            0
        };
        Self {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub t_eps: f64,
}

impl TrainConfig {
    pub fn new(loss: LossKind, tau: f64) -> Self {
        Self {
            loss,
            batch_size: 128,
            steps: 5000,
            learning_rate: 1e-3,
            schedule: LrSchedule::Cosine,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            t_eps: if loss.is_fd() { 1e-3 * tau } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
}

/// Stochastic-gradient training on mini-batches drawn from `mixing`
/// (DTRT kinds use only its data). Single-threaded and deterministic in
/// `config.seed`.
pub fn train(net: &mut Mlp, config: &TrainConfig, sde: &SdeSpec, mixing: &MixingDistribution) -> Result<TrainReport> {
    if config.batch_size == 0 || config.steps == 0 {
        return Err(Error::InvalidParameter("batch size and step count must be >= 1".into()));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidParameter("learning rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::new(config.optimizer, net.param_count());
    let mut grad = vec![0.0; net.param_count()];
    let mut trace = Trace::default();
    let mut loss_curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = sample_batch(config.loss, sde, mixing, config.batch_size, &mut rng, config.t_eps)?;
        let l = loss_and_gradient_into(&batch, net, &mut grad, &mut trace)?;
        if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                param_norm: net.param_norm(),
            });
        }
        loss_curve.push(l);
        let lr = config.schedule.rate(config.learning_rate, step, config.steps);
        opt.step(net.params_mut(), &grad, lr);
        if step % 1000 == 0 {
            log::debug!("step {step}: loss {l:.6e}, lr {lr:.3e}");
        }
    }
    Ok(TrainReport { loss_curve })
}

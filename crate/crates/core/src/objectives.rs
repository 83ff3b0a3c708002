//! Mini-batch estimators of the four training losses.
//!
//! - FD-DTRT: `r ~ U(t_eps, tau]`, `Y_0 ~ data`, `Y_r ~ q_{r|0}(. | Y_0)`;
//!   target `grad ln q_{r|0}(Y_r | Y_0)`, weight `R_r`.
//! - FD-DBMT: `t ~ U[0, tau - t_eps)`, `(X_0, X_tau)` from the coupling, `X_t`
//!   on their bridge; target `grad ln p_{t|0,tau}(X_t | X_0, X_tau)`, weight `J_t`.
//! - CE-DBMT: as FD-DBMT with `t ~ U[0, tau)`; target `X_tau`, weight 1.
//! - CE-DTRT: as FD-DTRT with `r ~ U(0, tau]`; target `Y_0`, weight 1.
//!
//! DTRT rows feed the noise level `r` to the network, DBMT rows the time `t`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::regressor::{Mlp, Trace};
use crate::sde::SdeSpec;
use crate::transport::{sample_coupling, MixingDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    FdDtrt,
    FdDbmt,
    CeDbmt,
    CeDtrt,
}

impl LossKind {
    pub fn is_fd(self) -> bool {
        matches!(self, LossKind::FdDtrt | LossKind::FdDbmt)
    }

    pub fn is_dtrt(self) -> bool {
        matches!(self, LossKind::FdDtrt | LossKind::CeDtrt)
    }
}

/// `t_eps` used when none is given, as a fraction of `tau`.
pub const DEFAULT_T_EPS_FRAC: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub dim: usize,
    /// Network time input: `t` for DBMT kinds, `r` for DTRT kinds.
    pub times: Vec<f64>,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub reg_weights: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn input(&self, b: usize) -> &[f64] {
        &self.inputs[b * self.dim..(b + 1) * self.dim]
    }

    pub fn target(&self, b: usize) -> &[f64] {
        &self.targets[b * self.dim..(b + 1) * self.dim]
    }
}

/// `R_r = v(0, r) / tr(Gamma^{-1})` or `J_t = v_br(t) / tr(Gamma^{-1})`: the
/// inverse expected squared norm of the conditional score.
pub fn regularizer_fd(kind: LossKind, sde: &SdeSpec, time: f64) -> Result<f64> {
    let tr = sde.gamma().trace_inverse()?;
    match kind {
        LossKind::FdDtrt => Ok(sde.transition_params(0.0, time)?.v / tr),
        LossKind::FdDbmt => Ok(sde.bridge_params(time)?.v / tr),
        _ => Err(Error::InvalidParameter("regularizers exist for FD kinds only".into())),
    }
}

fn check_setup(kind: LossKind, sde: &SdeSpec, mixing: &MixingDistribution, t_eps: f64) -> Result<()> {
    let tau = sde.tau();
    if !(0.0..tau / 10.0).contains(&t_eps) {
        return Err(Error::InvalidParameter(format!(
            "t_eps must lie in [0, tau/10), got {t_eps}"
        )));
    }
    if kind.is_fd() && t_eps == 0.0 {
        return Err(Error::InvalidParameter(
            "FD losses need t_eps > 0: the regularized target variance diverges at the singular end".into(),
        ));
    }
    if kind == LossKind::FdDbmt && !matches!(mixing, MixingDistribution::DeltaStart { .. }) {
        return Err(Error::InvalidParameter(
            "the FD-DBMT target conditions on the start point; use a delta start".into(),
        ));
    }
    if mixing.data().dim() != sde.dim() {
        return Err(Error::DimensionMismatch {
            expected: sde.dim(),
            got: mixing.data().dim(),
        });
    }
    Ok(())
}

fn draw_time<R: Rng + ?Sized>(kind: LossKind, tau: f64, t_eps: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    match kind {
        LossKind::FdDtrt => tau - u * (tau - t_eps),
        LossKind::CeDtrt => tau * (1.0 - u),
        LossKind::CeDbmt => tau * u,
        LossKind::FdDbmt => loop {
            let t = rng.random::<f64>() * (tau - t_eps);
            if t > 0.0 {
                break t;
            }
        },
    }
}

/// Draws a batch of `size` rows with uniformly distributed times.
pub fn sample_batch<R: Rng + ?Sized>(
    kind: LossKind,
    sde: &SdeSpec,
    mixing: &MixingDistribution,
    size: usize,
    rng: &mut R,
    t_eps: f64,
) -> Result<Batch> {
    check_setup(kind, sde, mixing, t_eps)?;
    if size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    let times: Vec<f64> = (0..size).map(|_| draw_time(kind, sde.tau(), t_eps, rng)).collect();
    fill_batch(kind, sde, mixing, times, rng)
}

/// Batch at caller-chosen times (network time inputs, see [`Batch::times`]).
pub fn sample_batch_at<R: Rng + ?Sized>(
    kind: LossKind,
    sde: &SdeSpec,
    mixing: &MixingDistribution,
    times: &[f64],
    rng: &mut R,
) -> Result<Batch> {
    let tau = sde.tau();
    let ok = times.iter().all(|&s| match kind {
        LossKind::FdDtrt | LossKind::CeDtrt => s > 0.0 && s <= tau,
        LossKind::FdDbmt => s > 0.0 && s < tau,
        LossKind::CeDbmt => (0.0..tau).contains(&s),
    });
    if !ok {
        return Err(Error::InvalidParameter(format!(
            "batch times outside the domain of {kind:?}"
        )));
    }
    check_setup(kind, sde, mixing, if kind.is_fd() { f64::MIN_POSITIVE } else { 0.0 })?;
    fill_batch(kind, sde, mixing, times.to_vec(), rng)
}

fn fill_batch<R: Rng + ?Sized>(
    kind: LossKind,
    sde: &SdeSpec,
    mixing: &MixingDistribution,
    times: Vec<f64>,
    rng: &mut R,
) -> Result<Batch> {
    let dim = sde.dim();
    let n = times.len();
    let mut inputs = Vec::with_capacity(n * dim);
    let mut targets = Vec::with_capacity(n * dim);
    let mut reg_weights = Vec::with_capacity(n);
    let data = mixing.data();
    for &s in &times {
        match kind {
            LossKind::FdDtrt | LossKind::CeDtrt => {
                let y0 = data.row(rng.random_range(0..data.len()));
                let yr = sde.sample_transition(y0, 0.0, s, rng)?;
                if kind == LossKind::FdDtrt {
                    targets.extend(sde.score_wrt_xtprime(y0, &yr, 0.0, s)?);
                    reg_weights.push(regularizer_fd(kind, sde, s)?);
                } else {
                    targets.extend_from_slice(y0);
                    reg_weights.push(1.0);
                }
                inputs.extend(yr);
            }
            LossKind::FdDbmt | LossKind::CeDbmt => {
                let (x0, x_tau) = sample_coupling(mixing, sde, rng);
                let xt = sde.sample_bridge_point(&x0, &x_tau, s, rng)?;
                if kind == LossKind::FdDbmt {
                    targets.extend(sde.bridge_score(&xt, &x0, &x_tau, s)?);
                    reg_weights.push(regularizer_fd(kind, sde, s)?);
                } else {
                    targets.extend(x_tau);
                    reg_weights.push(1.0);
                }
                inputs.extend(xt);
            }
        }
    }
    Ok(Batch {
        dim,
        times,
        inputs,
        targets,
        reg_weights,
    })
}

fn check_net(batch: &Batch, net: &Mlp) -> Result<()> {
    if net.dim() != batch.dim {
        return Err(Error::DimensionMismatch {
            expected: batch.dim,
            got: net.dim(),
        });
    }
    Ok(())
}

/// `mean_b w_b |target_b - s(input_b, time_b)|^2`.
pub fn loss(batch: &Batch, net: &Mlp) -> Result<f64> {
    check_net(batch, net)?;
    let mut total = 0.0;
    for b in 0..batch.len() {
        let out = net.forward(batch.input(b), batch.times[b]);
        let sq: f64 = out.iter().zip(batch.target(b)).map(|(o, y)| (y - o).powi(2)).sum();
        total += batch.reg_weights[b] * sq;
    }
    Ok(total / batch.len() as f64)
}

/// Loss and its gradient over the network parameters.
pub fn loss_and_gradient(batch: &Batch, net: &Mlp) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.param_count()];
    let l = loss_and_gradient_into(batch, net, &mut grad, &mut Trace::default())?;
    Ok((l, grad))
}

/// As [`loss_and_gradient`], overwriting `grad` and reusing `trace`.
pub fn loss_and_gradient_into(batch: &Batch, net: &Mlp, grad: &mut [f64], trace: &mut Trace) -> Result<f64> {
    check_net(batch, net)?;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut d_out = vec![0.0; batch.dim];
    for b in 0..batch.len() {
        net.forward_trace(batch.input(b), batch.times[b], trace);
        let w = batch.reg_weights[b];
        let mut sq = 0.0;
        for ((d, o), y) in d_out.iter_mut().zip(trace.output()).zip(batch.target(b)) {
            let r = y - o;
            sq += r * r;
            *d = -2.0 * w * r * scale;
        }
        total += w * sq;
        net.backward(trace, &d_out, grad);
    }
    Ok(total * scale)
}

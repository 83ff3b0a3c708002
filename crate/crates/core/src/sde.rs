//! Time-changed Brownian motion and Ornstein-Uhlenbeck SDEs
//!
//! ```text
//! dX_t = alpha beta_t X_t dt + sqrt(beta_t) Gamma^{1/2} dW_t      (alpha = 0: Brownian motion)
//! ```
//!
//! run on the clock `b_t = int_0^t beta_u du`. Transitions are Gaussian,
//! `N(a(t, t') x_t, v(t, t') Gamma)`, and so are the bridges pinned at both
//! ends; everything below is closed form in the two scalars `a` and `v`.

use std::sync::Arc;

use rand::Rng;

use crate::covariance::{CovarianceOperator, NoiseSampler};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};

/// Intensity `beta_t` of the time change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSchedule {
    Constant(f64),
    /// `beta_t = beta_min + t (beta_max - beta_min)`.
    LinearVp {
        beta_min: f64,
        beta_max: f64,
    },
    /// `beta_t = sigma_min^2 (sigma_max / sigma_min)^{2t} 2 ln(sigma_max / sigma_min)`.
    GeometricVe {
        sigma_min: f64,
        sigma_max: f64,
    },
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BetaSchedule::Constant(c) => c > 0.0 && c.is_finite(),
            BetaSchedule::LinearVp { beta_min, beta_max } => {
                beta_min > 0.0 && beta_max > 0.0 && beta_min.is_finite() && beta_max.is_finite()
            }
            BetaSchedule::GeometricVe { sigma_min, sigma_max } => {
                sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid beta schedule {self:?}")))
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        match *self {
            BetaSchedule::Constant(c) => c,
            BetaSchedule::LinearVp { beta_min, beta_max } => beta_min + t * (beta_max - beta_min),
            BetaSchedule::GeometricVe { sigma_min, sigma_max } => {
                let ratio = sigma_max / sigma_min;
                sigma_min * sigma_min * ratio.powf(2.0 * t) * 2.0 * ratio.ln()
            }
        }
    }

    /// `b_t = int_0^t beta_u du`, closed form, no domain check.
    pub fn integral(&self, t: f64) -> f64 {
        match *self {
            BetaSchedule::Constant(c) => c * t,
            BetaSchedule::LinearVp { beta_min, beta_max } => beta_min * t + 0.5 * t * t * (beta_max - beta_min),
            BetaSchedule::GeometricVe { sigma_min, sigma_max } => {
                sigma_min * sigma_min * (2.0 * t * (sigma_max / sigma_min).ln()).exp_m1()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdeKind {
    BrownianMotion,
    /// Constant mean-reversion rate on the warped clock; must be nonzero.
    OrnsteinUhlenbeck {
        alpha: f64,
    },
}

/// Integrated scaling `a` and variance `v` of a transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionParams {
    pub a: f64,
    pub v: f64,
}

/// Bridge law `N(a_under x_0 + a_over x_tau, v Gamma)` at an interior time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeParams {
    pub a_under: f64,
    pub a_over: f64,
    pub v: f64,
}

#[derive(Debug, Clone)]
pub struct SdeSpec {
    kind: SdeKind,
    beta: BetaSchedule,
    gamma: Arc<CovarianceOperator>,
    tau: f64,
}

impl SdeSpec {
    pub fn new(kind: SdeKind, beta: BetaSchedule, gamma: Arc<CovarianceOperator>, tau: f64) -> Result<Self> {
        if let SdeKind::OrnsteinUhlenbeck { alpha } = kind {
            if alpha == 0.0 || !alpha.is_finite() {
                return Err(Error::InvalidParameter(
                    "OU needs a finite nonzero alpha; use BrownianMotion for alpha = 0".into(),
                ));
            }
        }
        beta.validate()?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if gamma.dim() == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        Ok(Self { kind, beta, gamma, tau })
    }

    /// Standard Brownian motion in `dim` dimensions with `beta = 1`.
    pub fn brownian(dim: usize, tau: f64) -> Result<Self> {
        Self::new(
            SdeKind::BrownianMotion,
            BetaSchedule::Constant(1.0),
            Arc::new(CovarianceOperator::identity(dim)),
            tau,
        )
    }

    pub fn kind(&self) -> SdeKind {
        self.kind
    }

    pub fn schedule(&self) -> BetaSchedule {
        self.beta
    }

    pub fn gamma(&self) -> &CovarianceOperator {
        &self.gamma
    }

    pub fn gamma_arc(&self) -> &Arc<CovarianceOperator> {
        &self.gamma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.gamma.dim()
    }

    fn slack(&self) -> f64 {
        1e-12 * self.tau
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= -self.slack() && t <= self.tau + self.slack()) {
            return Err(Error::TimeOutOfDomain { t, tau: self.tau });
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `b_t`, for `t` in `[0, tau]`.
    pub fn b(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.beta.integral(t.clamp(0.0, self.tau)))
    }

    pub fn beta_at(&self, t: f64) -> f64 {
        self.beta.beta(t)
    }

    /// Coefficient `c` of the linear drift `f(x, t) = c x`.
    pub fn drift_coefficient(&self, t: f64) -> f64 {
        match self.kind {
            SdeKind::BrownianMotion => 0.0,
            SdeKind::OrnsteinUhlenbeck { alpha } => alpha * self.beta.beta(t),
        }
    }

    /// `(a, v)` of the transition from `t` to `t_next`. Intervals shorter
    /// than `1e-12 tau` give the deterministic limit `v = 0`.
    pub fn transition_params(&self, t: f64, t_next: f64) -> Result<TransitionParams> {
        self.check_time(t)?;
        self.check_time(t_next)?;
        if t_next < t {
            return Err(Error::DegenerateInterval { t, t_next });
        }
        let db = self.b(t_next)? - self.b(t)?;
        let degenerate = t_next - t < self.slack();
        Ok(match self.kind {
            SdeKind::BrownianMotion => TransitionParams {
                a: 1.0,
                v: if degenerate { 0.0 } else { db },
            },
            SdeKind::OrnsteinUhlenbeck { alpha } => TransitionParams {
                a: (alpha * db).exp(),
                v: if degenerate {
                    0.0
                } else {
                    (2.0 * alpha * db).exp_m1() / (2.0 * alpha)
                },
            },
        })
    }

    fn nondegenerate(&self, t: f64, t_next: f64) -> Result<TransitionParams> {
        let p = self.transition_params(t, t_next)?;
        if p.v <= 0.0 {
            return Err(Error::DegenerateInterval { t, t_next });
        }
        Ok(p)
    }

    /// Log-density of `N(mean, v Gamma)` at `x`.
    pub fn gaussian_logdensity(&self, x: &[f64], mean: &[f64], v: f64) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(mean)?;
        let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
        let prec_r = self.gamma.solve(&r)?;
        let d = self.dim() as f64;
        Ok(-0.5 * (d * (2.0 * std::f64::consts::PI * v).ln() + self.gamma.logdet()? + dot(&r, &prec_r) / v))
    }

    /// `ln p_{t'|t}(x_{t'} | x_t)`.
    pub fn transition_logdensity(&self, x_t: &[f64], x_next: &[f64], t: f64, t_next: f64) -> Result<f64> {
        let p = self.nondegenerate(t, t_next)?;
        let mean: Vec<f64> = x_t.iter().map(|x| p.a * x).collect();
        self.gaussian_logdensity(x_next, &mean, p.v)
    }

    /// `grad_{x_t} ln p_{t'|t}(x_{t'} | x_t) = Gamma^{-1} (x_{t'} / a - x_t) a^2 / v`.
    pub fn score_wrt_xt(&self, x_t: &[f64], x_next: &[f64], t: f64, t_next: f64) -> Result<Vec<f64>> {
        self.check_dim(x_t)?;
        self.check_dim(x_next)?;
        let p = self.nondegenerate(t, t_next)?;
        let r: Vec<f64> = x_next
            .iter()
            .zip(x_t)
            .map(|(y, x)| (y / p.a - x) * p.a * p.a / p.v)
            .collect();
        self.gamma.solve(&r)
    }

    /// `grad_{x_{t'}} ln p_{t'|t}(x_{t'} | x_t) = Gamma^{-1} (a x_t - x_{t'}) / v`.
    pub fn score_wrt_xtprime(&self, x_t: &[f64], x_next: &[f64], t: f64, t_next: f64) -> Result<Vec<f64>> {
        self.check_dim(x_t)?;
        self.check_dim(x_next)?;
        let p = self.nondegenerate(t, t_next)?;
        let r: Vec<f64> = x_t.iter().zip(x_next).map(|(x, y)| (p.a * x - y) / p.v).collect();
        self.gamma.solve(&r)
    }

    /// Bridge coefficients at an interior time `0 < t < tau`.
    pub fn bridge_params(&self, t: f64) -> Result<BridgeParams> {
        if !(t > 0.0 && t < self.tau) {
            return Err(Error::TimeOutOfDomain { t, tau: self.tau });
        }
        let head = self.transition_params(0.0, t)?;
        let tail = self.transition_params(t, self.tau)?;
        if head.v <= 0.0 || tail.v <= 0.0 {
            return Err(Error::TimeOutOfDomain { t, tau: self.tau });
        }
        let denom = head.v * tail.a * tail.a + tail.v;
        Ok(BridgeParams {
            a_under: tail.v * head.a / denom,
            a_over: head.v * tail.a / denom,
            v: head.v * tail.v / denom,
        })
    }

    /// Bridge coefficients including the pinned endpoints.
    pub(crate) fn bridge_law(&self, t: f64) -> Result<BridgeParams> {
        self.check_time(t)?;
        if t <= self.slack() {
            Ok(BridgeParams {
                a_under: 1.0,
                a_over: 0.0,
                v: 0.0,
            })
        } else if t >= self.tau - self.slack() {
            Ok(BridgeParams {
                a_under: 0.0,
                a_over: 1.0,
                v: 0.0,
            })
        } else {
            self.bridge_params(t)
        }
    }

    fn bridge_mean(&self, x0: &[f64], x_tau: &[f64], p: &BridgeParams) -> Vec<f64> {
        x0.iter()
            .zip(x_tau)
            .map(|(a, b)| p.a_under * a + p.a_over * b)
            .collect()
    }

    /// `ln p_{t|0,tau}(x_t | x_0, x_tau)`.
    pub fn bridge_logdensity(&self, x_t: &[f64], x0: &[f64], x_tau: &[f64], t: f64) -> Result<f64> {
        self.check_dim(x0)?;
        self.check_dim(x_tau)?;
        let p = self.bridge_params(t)?;
        self.gaussian_logdensity(x_t, &self.bridge_mean(x0, x_tau, &p), p.v)
    }

    /// `grad_{x_t} ln p_{t|0,tau}(x_t | x_0, x_tau)`.
    pub fn bridge_score(&self, x_t: &[f64], x0: &[f64], x_tau: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim(x_t)?;
        self.check_dim(x0)?;
        self.check_dim(x_tau)?;
        let p = self.bridge_params(t)?;
        let mut r = self.bridge_mean(x0, x_tau, &p);
        axpy(-1.0, x_t, &mut r);
        r.iter_mut().for_each(|v| *v /= p.v);
        self.gamma.solve(&r)
    }

    fn add_scaled_noise<R: Rng + ?Sized>(&self, mean: &mut [f64], v: f64, rng: &mut R) {
        if v > 0.0 {
            let noise = NoiseSampler::new(&self.gamma).sample(rng);
            axpy(v.sqrt(), &noise, mean);
        }
    }

    /// Draw from `p_{t'|t}(. | x_t)`.
    pub fn sample_transition<R: Rng + ?Sized>(
        &self,
        x_t: &[f64],
        t: f64,
        t_next: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_dim(x_t)?;
        let p = self.transition_params(t, t_next)?;
        let mut out: Vec<f64> = x_t.iter().map(|x| p.a * x).collect();
        self.add_scaled_noise(&mut out, p.v, rng);
        Ok(out)
    }

    /// Draw from the bridge `p_{t|0,tau}(. | x_0, x_tau)`, `t` in `[0, tau]`.
    pub fn sample_bridge_point<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        x_tau: &[f64],
        t: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_dim(x0)?;
        self.check_dim(x_tau)?;
        let p = self.bridge_law(t)?;
        let mut out = self.bridge_mean(x0, x_tau, &p);
        self.add_scaled_noise(&mut out, p.v, rng);
        Ok(out)
    }
}

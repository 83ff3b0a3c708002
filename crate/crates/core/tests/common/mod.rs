//! Independent reference computations for the integration tests: transition
//! coefficients by quadrature, Gaussian densities by dense Cholesky.

#![allow(dead_code)]

use std::sync::Arc;

use dbmt_core::covariance::CovarianceOperator;
use dbmt_core::sde::{BetaSchedule, SdeKind, SdeSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`, by
/// Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Composite 20-point Gauss-Legendre over `panels` equal panels.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    thread_local! {
        static RULE: Vec<(f64, f64)> = gauss_legendre(20);
    }
    RULE.with(|rule| {
        let h = (hi - lo) / panels as f64;
        (0..panels)
            .map(|p| {
                let mid = lo + (p as f64 + 0.5) * h;
                rule.iter().map(|&(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
            })
            .sum()
    })
}

pub fn random_spd<R: Rng>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| {
        rng.sample::<f64, _>(StandardNormal) / (dim as f64).sqrt()
    });
    &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5
}

pub fn normal_vec<R: Rng>(dim: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// The same SDE as an [`SdeSpec`], evaluated without the library's closed forms.
pub struct Oracle {
    pub kind: SdeKind,
    pub schedule: BetaSchedule,
    pub gamma: DMatrix<f64>,
    pub tau: f64,
}

const PANELS: usize = 16;

impl Oracle {
    pub fn new(kind: SdeKind, schedule: BetaSchedule, gamma: DMatrix<f64>, tau: f64) -> Self {
        Self {
            kind,
            schedule,
            gamma,
            tau,
        }
    }

    pub fn spec(&self) -> SdeSpec {
        let op = CovarianceOperator::dense(self.gamma.clone()).unwrap();
        SdeSpec::new(self.kind, self.schedule, Arc::new(op), self.tau).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    fn alpha(&self) -> f64 {
        match self.kind {
            SdeKind::BrownianMotion => 0.0,
            SdeKind::OrnsteinUhlenbeck { alpha } => alpha,
        }
    }

    pub fn b(&self, t: f64) -> f64 {
        integrate(|u| self.schedule.beta(u), 0.0, t, PANELS)
    }

    /// `a = exp(alpha (b_t' - b_t))`, `v = int_t^t' beta_s exp(2 alpha (b_t' - b_s)) ds`.
    pub fn av(&self, t: f64, t_next: f64) -> (f64, f64) {
        let alpha = self.alpha();
        let b_next = self.b(t_next);
        let a = (alpha * (b_next - self.b(t))).exp();
        // b_s inside the integrand by a nested quadrature from t.
        let b_t = self.b(t);
        let v = integrate(
            |s| {
                let bs = b_t + integrate(|u| self.schedule.beta(u), t, s, PANELS);
                self.schedule.beta(s) * (2.0 * alpha * (b_next - bs)).exp()
            },
            t,
            t_next,
            PANELS,
        );
        (a, v)
    }

    pub fn gauss_logpdf(&self, x: &[f64], mean: &[f64], v: f64) -> f64 {
        let d = self.dim();
        let cov = &self.gamma * v;
        let chol = cov.clone().cholesky().unwrap();
        let r = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
        let sol = chol.solve(&r);
        let logdet = 2.0 * chol.l().diagonal().iter().map(|l| l.ln()).sum::<f64>();
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + r.dot(&sol))
    }

    pub fn transition_logpdf(&self, x_t: &[f64], x_next: &[f64], t: f64, t_next: f64) -> f64 {
        let (a, v) = self.av(t, t_next);
        let mean: Vec<f64> = x_t.iter().map(|x| a * x).collect();
        self.gauss_logpdf(x_next, &mean, v)
    }

    /// Posterior of `X_t` given both ends, by Gaussian conditioning.
    pub fn bridge(&self, t: f64) -> (f64, f64, f64) {
        let (a1, v1) = self.av(0.0, t);
        let (a2, v2) = self.av(t, self.tau);
        let prec = 1.0 / v1 + a2 * a2 / v2;
        (a1 / v1 / prec, a2 / v2 / prec, 1.0 / prec)
    }

    pub fn bridge_logpdf(&self, x_t: &[f64], x0: &[f64], x_tau: &[f64], t: f64) -> f64 {
        let (cu, co, v) = self.bridge(t);
        let mean: Vec<f64> = x0.iter().zip(x_tau).map(|(a, b)| cu * a + co * b).collect();
        self.gauss_logpdf(x_t, &mean, v)
    }

    pub fn apply_gamma(&self, x: &[f64]) -> Vec<f64> {
        (&self.gamma * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    pub fn solve_gamma(&self, x: &[f64]) -> Vec<f64> {
        let chol = self.gamma.clone().cholesky().unwrap();
        chol.solve(&DVector::from_column_slice(x)).as_slice().to_vec()
    }

    pub fn drift_coefficient(&self, t: f64) -> f64 {
        self.alpha() * self.schedule.beta(t)
    }
}

/// Central-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

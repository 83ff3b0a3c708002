//! Drift adjustments of the bridge mixture (DBMT) and time-reversal (DTRT)
//! transports, written as attraction towards a weighted average of the data.
//!
//! Both drifts reduce to one O(N) pass: a softmax over per-sample Gaussian
//! log-evidences gives weights `w`, and the adjustment pulls `x` towards
//! `E = sum_n w_n x^(n)`.

use std::io::{self, BufRead, Write};
use std::sync::Arc;

use rand::Rng;

use crate::covariance::NoiseSampler;
use crate::error::{Error, Result};
use crate::linalg::{dot, logsumexp};
use crate::regressor::Mlp;
use crate::sde::SdeSpec;

/// `N` samples of dimension `D`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    data: Vec<f64>,
}

impl Dataset {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "dataset of {} values does not split into rows of {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("dataset has non-finite entries".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::from_flat(dim, rows.concat())
    }

    /// One-dimensional atoms.
    pub fn scalars(values: &[f64]) -> Result<Self> {
        Self::from_flat(1, values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// The three scalar atoms `{-2, 0, 2}`.
    pub fn toy() -> Self {
        Self::scalars(&[-2.0, 0.0, 2.0]).unwrap()
    }

    /// 32 points in the plane: 16 evenly spaced on the unit circle and 16 on
    /// the circle of radius 2, the outer ring rotated by half a step.
    pub fn two_rings() -> Self {
        let step = std::f64::consts::TAU / 16.0;
        let mut data = Vec::with_capacity(64);
        for (radius, offset) in [(1.0, 0.0), (2.0, 0.5 * step)] {
            for k in 0..16 {
                let angle = k as f64 * step + offset;
                data.extend([radius * angle.cos(), radius * angle.sin()]);
            }
        }
        Self::from_flat(2, data).unwrap()
    }

    /// CSV with one sample per line; blank lines and `#` comments skipped.
    pub fn read_csv<R: BufRead>(input: R) -> io::Result<Self> {
        let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| invalid(format!("line {}: {e}", i + 1)))?;
            rows.push(row);
        }
        Self::from_rows(&rows).map_err(|e| invalid(e.to_string()))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in self.rows() {
            let line: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// The coupling of start and end points. The end marginal is always the
/// empirical distribution of `data`.
#[derive(Debug, Clone)]
pub enum MixingDistribution {
    /// Every path starts at `x0`.
    DeltaStart { x0: Vec<f64>, data: Arc<Dataset> },
    /// `X_0 ~ N(0, scale Gamma)` independent of the endpoint.
    GaussianStart { scale: f64, data: Arc<Dataset> },
    /// `X_0 = X_tau`.
    Identity { data: Arc<Dataset> },
    /// `X_0` uniform over `starts`, independent of the endpoint.
    EmpiricalStart { starts: Arc<Dataset>, data: Arc<Dataset> },
}

impl MixingDistribution {
    pub fn data(&self) -> &Arc<Dataset> {
        match self {
            MixingDistribution::DeltaStart { data, .. }
            | MixingDistribution::GaussianStart { data, .. }
            | MixingDistribution::Identity { data }
            | MixingDistribution::EmpiricalStart { data, .. } => data,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let check = |got: usize| {
            if got != dim {
                Err(Error::DimensionMismatch { expected: dim, got })
            } else {
                Ok(())
            }
        };
        check(self.data().dim())?;
        match self {
            MixingDistribution::DeltaStart { x0, .. } => check(x0.len()),
            MixingDistribution::GaussianStart { scale, .. } => {
                if *scale > 0.0 && scale.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "start scale must be positive, got {scale}"
                    )))
                }
            }
            MixingDistribution::Identity { .. } => Ok(()),
            MixingDistribution::EmpiricalStart { starts, .. } => check(starts.dim()),
        }
    }
}

/// Probabilities over the dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Normalizes log-weights with max subtraction.
    pub fn from_log(log_w: &[f64]) -> Result<Self> {
        let lse = logsumexp(log_w);
        if !lse.is_finite() {
            return Err(Error::WeightUnderflow);
        }
        let w: Vec<f64> = log_w.iter().map(|l| (l - lse).exp()).collect();
        let total: f64 = w.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::WeightUnderflow);
        }
        Ok(Self(w.into_iter().map(|v| v / total).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(0.0, f64::max)
    }

    /// `sum_n w_n x^(n)`.
    pub fn expectation(&self, data: &Dataset) -> Vec<f64> {
        let mut e = vec![0.0; data.dim()];
        for (w, r) in self.0.iter().zip(data.rows()) {
            e.iter_mut().zip(r).for_each(|(a, b)| *a += w * b);
        }
        e
    }
}

/// Drift at a point, with the weights and denoised estimate when available.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEval {
    pub drift: Vec<f64>,
    pub weights: Option<WeightVector>,
    pub denoised: Option<Vec<f64>>,
}

/// `Gamma^{-1}`-inner products that do not depend on the state.
#[derive(Debug, Clone)]
struct Gram {
    prec_data: Vec<Vec<f64>>,
    norm_data: Vec<f64>,
    norm_starts: Vec<f64>,
    /// `cross[n][m] = x^(n) . Gamma^{-1} s^(m)`.
    cross: Vec<Vec<f64>>,
}

impl Gram {
    fn new(sde: &SdeSpec, data: &Dataset, starts: &[&[f64]]) -> Result<Self> {
        let gamma = sde.gamma();
        let prec_data = data.rows().map(|r| gamma.solve(r)).collect::<Result<Vec<_>>>()?;
        let norm_data = data.rows().zip(&prec_data).map(|(r, p)| dot(r, p)).collect();
        let norm_starts = starts
            .iter()
            .map(|s| Ok(dot(s, &gamma.solve(s)?)))
            .collect::<Result<Vec<_>>>()?;
        let cross = prec_data
            .iter()
            .map(|p| starts.iter().map(|s| dot(s, p)).collect())
            .collect();
        Ok(Self {
            prec_data,
            norm_data,
            norm_starts,
            cross,
        })
    }
}

fn start_rows(mixing: &MixingDistribution) -> Vec<&[f64]> {
    match mixing {
        MixingDistribution::DeltaStart { x0, .. } => vec![x0.as_slice()],
        MixingDistribution::EmpiricalStart { starts, .. } => starts.rows().collect(),
        _ => Vec::new(),
    }
}

/// Exact bridge mixture drift for a fixed SDE and coupling.
#[derive(Debug, Clone)]
pub struct ExactDbmt {
    sde: SdeSpec,
    mixing: MixingDistribution,
    gram: Gram,
}

impl ExactDbmt {
    pub fn new(sde: SdeSpec, mixing: MixingDistribution) -> Result<Self> {
        mixing.validate(sde.dim())?;
        let gram = Gram::new(&sde, mixing.data(), &start_rows(&mixing))?;
        Ok(Self { sde, mixing, gram })
    }

    pub fn sde(&self) -> &SdeSpec {
        &self.sde
    }

    pub fn mixing(&self) -> &MixingDistribution {
        &self.mixing
    }

    fn check(&self, x: &[f64], t: f64) -> Result<()> {
        if x.len() != self.sde.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.sde.dim(),
                got: x.len(),
            });
        }
        if !(t >= 0.0 && t < self.sde.tau()) {
            return Err(Error::TimeOutOfDomain { t, tau: self.sde.tau() });
        }
        Ok(())
    }

    /// Per-row log bridge evidence, up to an `n`-independent constant.
    fn log_evidence(&self, y: &[f64], au: f64, ao: f64, v: f64) -> Vec<f64> {
        let g = &self.gram;
        let data = self.mixing.data();
        let xy: Vec<f64> = data.rows().map(|r| dot(r, y)).collect();
        match &self.mixing {
            MixingDistribution::Identity { .. } => {
                let c = au + ao;
                (0..data.len())
                    .map(|n| -(-2.0 * c * xy[n] + c * c * g.norm_data[n]) / (2.0 * v))
                    .collect()
            }
            MixingDistribution::GaussianStart { scale, .. } => {
                let v = v + scale * au * au;
                (0..data.len())
                    .map(|n| -(-2.0 * ao * xy[n] + ao * ao * g.norm_data[n]) / (2.0 * v))
                    .collect()
            }
            MixingDistribution::DeltaStart { .. } | MixingDistribution::EmpiricalStart { .. } => {
                let sy: Vec<f64> = start_rows(&self.mixing).iter().map(|s| dot(s, y)).collect();
                let mut terms = vec![0.0; g.norm_starts.len()];
                (0..data.len())
                    .map(|n| {
                        for (m, term) in terms.iter_mut().enumerate() {
                            let q = -2.0 * au * sy[m] + au * au * g.norm_starts[m] - 2.0 * ao * xy[n]
                                + 2.0 * au * ao * g.cross[n][m]
                                + ao * ao * g.norm_data[n];
                            *term = -q / (2.0 * v);
                        }
                        logsumexp(&terms)
                    })
                    .collect()
            }
        }
    }

    /// Posterior probabilities of each data row being the endpoint, given
    /// `X_t = x`.
    pub fn weights(&self, x: &[f64], t: f64) -> Result<WeightVector> {
        self.check(x, t)?;
        let n = self.mixing.data().len();
        if n == 1 {
            return Ok(WeightVector::uniform(1));
        }
        let law = self.sde.bridge_law(t)?;
        if law.v > 0.0 {
            let y = self.sde.gamma().solve(x)?;
            return WeightVector::from_log(&self.log_evidence(&y, law.a_under, law.a_over, law.v));
        }
        // t = 0: the bridge evidence degenerates, use its limit.
        match &self.mixing {
            MixingDistribution::DeltaStart { x0, data } => {
                let p = self.sde.transition_params(0.0, self.sde.tau())?;
                let diff: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
                let log_w: Vec<f64> = self
                    .gram
                    .prec_data
                    .iter()
                    .map(|pd| p.a * dot(pd, &diff) / p.v)
                    .collect();
                debug_assert_eq!(log_w.len(), data.len());
                WeightVector::from_log(&log_w)
            }
            MixingDistribution::Identity { data } => {
                let log_w: Vec<f64> = data
                    .rows()
                    .map(|r| {
                        let close = r.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                        if close {
                            0.0
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                WeightVector::from_log(&log_w)
                    .map_err(|_| Error::InvalidParameter("identity coupling evaluated at t = 0 off the data".into()))
            }
            MixingDistribution::GaussianStart { .. } | MixingDistribution::EmpiricalStart { .. } => {
                Ok(WeightVector::uniform(n))
            }
        }
    }

    /// Full drift `f + beta_t (E / a(t, tau) - x) a^2(t, tau) / v(t, tau)`.
    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<DriftEval> {
        let weights = self.weights(x, t)?;
        let denoised = weights.expectation(self.mixing.data());
        let p = self.sde.transition_params(t, self.sde.tau())?;
        if p.v <= 0.0 {
            return Err(Error::TimeOutOfDomain { t, tau: self.sde.tau() });
        }
        let c = self.sde.drift_coefficient(t);
        let beta = self.sde.beta_at(t);
        let drift = x
            .iter()
            .zip(&denoised)
            .map(|(xi, e)| c * xi + beta * (e / p.a - xi) * p.a * p.a / p.v)
            .collect();
        Ok(DriftEval {
            drift,
            weights: Some(weights),
            denoised: Some(denoised),
        })
    }

    /// The adjustment `A(x, t) = sum_n w_n grad_x ln p_{tau|t}(x^(n) | x)`,
    /// i.e. the drift minus `f`, divided by `G = beta_t Gamma`.
    pub fn adjustment(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let weights = self.weights(x, t)?;
        let e = weights.expectation(self.mixing.data());
        let p = self.sde.transition_params(t, self.sde.tau())?;
        let r: Vec<f64> = x
            .iter()
            .zip(&e)
            .map(|(xi, ei)| (ei / p.a - xi) * p.a * p.a / p.v)
            .collect();
        self.sde.gamma().solve(&r)
    }

    /// `ln pi_t(x)`, the mixture of bridge densities over the coupling, for
    /// `0 < t < tau`.
    pub fn marginal_logdensity(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check(x, t)?;
        let law = self.sde.bridge_params(t)?;
        let gamma = self.sde.gamma();
        let y = gamma.solve(x)?;
        let mut v = law.v;
        let n_pairs = match &self.mixing {
            MixingDistribution::EmpiricalStart { starts, data } => starts.len() * data.len(),
            MixingDistribution::GaussianStart { scale, data } => {
                v += scale * law.a_under * law.a_under;
                data.len()
            }
            m => m.data().len(),
        };
        let ev = self.log_evidence(&y, law.a_under, law.a_over, law.v);
        let d = x.len() as f64;
        Ok(logsumexp(&ev)
            - (n_pairs as f64).ln()
            - dot(x, &y) / (2.0 * v)
            - 0.5 * (d * (2.0 * std::f64::consts::PI * v).ln() + gamma.logdet()?))
    }
}

/// Exact time-reversal drift for a fixed SDE and dataset.
#[derive(Debug, Clone)]
pub struct ExactDtrt {
    sde: SdeSpec,
    data: Arc<Dataset>,
    gram: Gram,
}

impl ExactDtrt {
    pub fn new(sde: SdeSpec, data: Arc<Dataset>) -> Result<Self> {
        if data.dim() != sde.dim() {
            return Err(Error::DimensionMismatch {
                expected: sde.dim(),
                got: data.dim(),
            });
        }
        let gram = Gram::new(&sde, &data, &[])?;
        Ok(Self { sde, data, gram })
    }

    pub fn sde(&self) -> &SdeSpec {
        &self.sde
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    fn noising(&self, y: &[f64], r: f64) -> Result<crate::sde::TransitionParams> {
        if y.len() != self.sde.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.sde.dim(),
                got: y.len(),
            });
        }
        let p = self.sde.transition_params(0.0, r)?;
        if !(r > 0.0) || p.v <= 0.0 {
            return Err(Error::TimeOutOfDomain {
                t: r,
                tau: self.sde.tau(),
            });
        }
        Ok(p)
    }

    fn log_evidence(&self, y: &[f64], r: f64) -> Result<(Vec<f64>, crate::sde::TransitionParams)> {
        let p = self.noising(y, r)?;
        let prec_y = self.sde.gamma().solve(y)?;
        let ev = self
            .data
            .rows()
            .zip(&self.gram.norm_data)
            .map(|(row, nd)| (2.0 * p.a * dot(row, &prec_y) - p.a * p.a * nd) / (2.0 * p.v))
            .collect();
        Ok((ev, p))
    }

    /// Weights `w_n ∝ q_{r|0}(y | x^(n))` at noise level `r`.
    pub fn weights(&self, y: &[f64], r: f64) -> Result<WeightVector> {
        let (ev, _) = self.log_evidence(y, r)?;
        WeightVector::from_log(&ev)
    }

    /// `ln q_r(y)` for the noising process started from the data.
    pub fn marginal_logdensity(&self, y: &[f64], r: f64) -> Result<f64> {
        let (ev, p) = self.log_evidence(y, r)?;
        let gamma = self.sde.gamma();
        let prec_y = gamma.solve(y)?;
        let d = y.len() as f64;
        Ok(logsumexp(&ev)
            - (self.data.len() as f64).ln()
            - dot(y, &prec_y) / (2.0 * p.v)
            - 0.5 * (d * (2.0 * std::f64::consts::PI * p.v).ln() + gamma.logdet()?))
    }

    /// `grad ln q_r(y) = Gamma^{-1} (a(0, r) E - y) / v(0, r)`.
    pub fn score(&self, y: &[f64], r: f64) -> Result<Vec<f64>> {
        let (ev, p) = self.log_evidence(y, r)?;
        let e = WeightVector::from_log(&ev)?.expectation(&self.data);
        let diff: Vec<f64> = e.iter().zip(y).map(|(ei, yi)| (p.a * ei - yi) / p.v).collect();
        self.sde.gamma().solve(&diff)
    }

    /// Reverse-time drift at sampling time `t`, i.e. noise level `r = tau - t`.
    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<DriftEval> {
        let r = self.sde.tau() - t;
        if !(t >= 0.0) {
            return Err(Error::TimeOutOfDomain { t, tau: self.sde.tau() });
        }
        let (ev, p) = self.log_evidence(x, r)?;
        let weights = WeightVector::from_log(&ev)?;
        let denoised = weights.expectation(&self.data);
        let c = self.sde.drift_coefficient(r);
        let beta = self.sde.beta_at(r);
        // G = beta Gamma does not depend on the state, so div G is zero.
        let div_g = 0.0;
        let drift = x
            .iter()
            .zip(&denoised)
            .map(|(xi, e)| -c * xi + div_g + beta * (p.a * e - xi) / p.v)
            .collect();
        Ok(DriftEval {
            drift,
            weights: Some(weights),
            denoised: Some(denoised),
        })
    }
}

/// Which transport a learned field drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Dbmt,
    Dtrt,
}

/// What a learned network predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnedTarget {
    /// The endpoint expectation (`E[X_tau | x, t]` or `E[Y_0 | y, r]`).
    Expectation,
    /// A score (the start-conditioned mixture score for DBMT, `grad ln q_r`
    /// for DTRT).
    Score,
}

/// Drift driven by a trained network.
#[derive(Debug, Clone)]
pub struct LearnedDrift {
    pub sde: SdeSpec,
    pub net: Arc<Mlp>,
    pub target: LearnedTarget,
    pub direction: Direction,
    /// Start point; required for score-trained DBMT fields.
    pub start: Option<Vec<f64>>,
}

/// Time below which a score-trained DBMT field is evaluated at `T_MIN_FRAC * tau`.
pub const T_MIN_FRAC: f64 = 1e-3;

impl LearnedDrift {
    pub fn new(
        sde: SdeSpec,
        net: Arc<Mlp>,
        target: LearnedTarget,
        direction: Direction,
        start: Option<Vec<f64>>,
    ) -> Result<Self> {
        if net.dim() != sde.dim() {
            return Err(Error::DimensionMismatch {
                expected: sde.dim(),
                got: net.dim(),
            });
        }
        if direction == Direction::Dbmt && target == LearnedTarget::Score {
            match &start {
                Some(s) if s.len() == sde.dim() => {}
                _ => {
                    return Err(Error::InvalidParameter(
                        "score-trained DBMT drift needs the delta start point".into(),
                    ))
                }
            }
        }
        Ok(Self {
            sde,
            net,
            target,
            direction,
            start,
        })
    }

    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<DriftEval> {
        let sde = &self.sde;
        let tau = sde.tau();
        if !(t >= 0.0 && t < tau) {
            return Err(Error::TimeOutOfDomain { t, tau });
        }
        match self.direction {
            Direction::Dbmt => {
                let c = sde.drift_coefficient(t);
                let beta = sde.beta_at(t);
                match self.target {
                    LearnedTarget::Expectation => {
                        let s = self.net.forward(x, t);
                        let p = sde.transition_params(t, tau)?;
                        let drift = x
                            .iter()
                            .zip(&s)
                            .map(|(xi, e)| c * xi + beta * (e / p.a - xi) * p.a * p.a / p.v)
                            .collect();
                        Ok(DriftEval {
                            drift,
                            weights: None,
                            denoised: Some(s),
                        })
                    }
                    LearnedTarget::Score => {
                        // A = s - grad_x ln p_{t|0}(x | x0).
                        let te = t.max(T_MIN_FRAC * tau);
                        let s = self.net.forward(x, te);
                        let gs = sde.gamma().apply(&s)?;
                        let x0 = self.start.as_ref().expect("checked in new");
                        let p = sde.transition_params(0.0, te)?;
                        let drift = x
                            .iter()
                            .zip(&gs)
                            .zip(x0)
                            .map(|((xi, g), s0)| c * xi + beta * (g - (p.a * s0 - xi) / p.v))
                            .collect();
                        Ok(DriftEval {
                            drift,
                            weights: None,
                            denoised: None,
                        })
                    }
                }
            }
            Direction::Dtrt => {
                let r = tau - t;
                let c = sde.drift_coefficient(r);
                let beta = sde.beta_at(r);
                let s = self.net.forward(x, r);
                let p = sde.transition_params(0.0, r)?;
                let (drift, denoised) = match self.target {
                    LearnedTarget::Expectation => (
                        x.iter()
                            .zip(&s)
                            .map(|(xi, e)| -c * xi + beta * (p.a * e - xi) / p.v)
                            .collect(),
                        s,
                    ),
                    LearnedTarget::Score => {
                        let gs = sde.gamma().apply(&s)?;
                        let drift = x.iter().zip(&gs).map(|(xi, g)| -c * xi + beta * g).collect();
                        (drift, recover_expectation_from_score(sde, &s, x, r)?)
                    }
                };
                Ok(DriftEval {
                    drift,
                    weights: None,
                    denoised: Some(denoised),
                })
            }
        }
    }
}

/// The drift of an SDE that transports the start law to the data.
#[derive(Debug, Clone)]
pub enum DriftField {
    ExactDbmt(ExactDbmt),
    ExactDtrt(ExactDtrt),
    Learned(LearnedDrift),
}

impl DriftField {
    pub fn exact_dbmt(sde: SdeSpec, mixing: MixingDistribution) -> Result<Self> {
        ExactDbmt::new(sde, mixing).map(DriftField::ExactDbmt)
    }

    pub fn exact_dtrt(sde: SdeSpec, data: Arc<Dataset>) -> Result<Self> {
        ExactDtrt::new(sde, data).map(DriftField::ExactDtrt)
    }

    pub fn sde(&self) -> &SdeSpec {
        match self {
            DriftField::ExactDbmt(f) => &f.sde,
            DriftField::ExactDtrt(f) => &f.sde,
            DriftField::Learned(f) => &f.sde,
        }
    }

    pub fn direction(&self) -> Direction {
        match self {
            DriftField::ExactDbmt(_) => Direction::Dbmt,
            DriftField::ExactDtrt(_) => Direction::Dtrt,
            DriftField::Learned(f) => f.direction,
        }
    }

    /// Drift at sampling time `t` in `[0, tau)`.
    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<DriftEval> {
        match self {
            DriftField::ExactDbmt(f) => f.evaluate(x, t),
            DriftField::ExactDtrt(f) => f.evaluate(x, t),
            DriftField::Learned(f) => f.evaluate(x, t),
        }
    }

    /// `beta` multiplying `Gamma` in the diffusion at sampling time `t`.
    pub fn diffusion_beta(&self, t: f64) -> f64 {
        let sde = self.sde();
        match self.direction() {
            Direction::Dbmt => sde.beta_at(t),
            Direction::Dtrt => sde.beta_at(sde.tau() - t),
        }
    }
}

/// Free-function form of [`ExactDbmt::weights`].
pub fn dbmt_weights(sde: &SdeSpec, mixing: &MixingDistribution, x: &[f64], t: f64) -> Result<WeightVector> {
    ExactDbmt::new(sde.clone(), mixing.clone())?.weights(x, t)
}

/// Free-function form of [`ExactDtrt::weights`].
pub fn dtrt_weights(sde: &SdeSpec, data: &Arc<Dataset>, y: &[f64], r: f64) -> Result<WeightVector> {
    ExactDtrt::new(sde.clone(), data.clone())?.weights(y, r)
}

/// The endpoint expectation implied by a score of the noised marginal:
/// `E = (v(0, r) Gamma score + x) / a(0, r)`.
pub fn recover_expectation_from_score(sde: &SdeSpec, score: &[f64], x: &[f64], r: f64) -> Result<Vec<f64>> {
    if !(r > 0.0) {
        return Err(Error::TimeOutOfDomain { t: r, tau: sde.tau() });
    }
    let p = sde.transition_params(0.0, r)?;
    let gs = sde.gamma().apply(score)?;
    if x.len() != gs.len() {
        return Err(Error::DimensionMismatch {
            expected: gs.len(),
            got: x.len(),
        });
    }
    Ok(gs.iter().zip(x).map(|(g, xi)| (p.v * g + xi) / p.a).collect())
}

/// Start point that makes the DBMT adjustment vanish at `t = 0`:
/// the data mean divided by `a(0, tau)`.
pub fn centered_start(data: &Dataset, sde: &SdeSpec) -> Result<Vec<f64>> {
    let a = sde.transition_params(0.0, sde.tau())?.a;
    Ok(data.mean().into_iter().map(|m| m / a).collect())
}

/// Draws `(X_0, X_tau)` from the coupling.
pub fn sample_coupling<R: Rng + ?Sized>(
    mixing: &MixingDistribution,
    sde: &SdeSpec,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let data = mixing.data();
    let n = rng.random_range(0..data.len());
    let x_tau = data.row(n).to_vec();
    let x0 = match mixing {
        MixingDistribution::DeltaStart { x0, .. } => x0.clone(),
        MixingDistribution::GaussianStart { scale, .. } => {
            let mut z = NoiseSampler::new(sde.gamma()).sample(rng);
            z.iter_mut().for_each(|v| *v *= scale.sqrt());
            z
        }
        MixingDistribution::Identity { .. } => x_tau.clone(),
        MixingDistribution::EmpiricalStart { starts, .. } => starts.row(rng.random_range(0..starts.len())).to_vec(),
    };
    (x0, x_tau)
}

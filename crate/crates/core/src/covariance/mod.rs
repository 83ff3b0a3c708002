//! Spatial covariance operators `Gamma` and their estimation.

mod circulant;
mod field;
mod kernel;
mod variogram;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

pub use circulant::{
    build_torus_operator, build_torus_operator_with, embed_plane_operator, CirculantKind, CirculantOperator,
    SPECTRUM_RTOL,
};
pub use field::Field;
pub use kernel::Kernel;
pub use variogram::{
    empirical_variogram, fit_variogram_wls, wls_objective, EmpiricalVariogram, VariogramFamily, VariogramFit,
    LENGTH_SCALE_BOUNDS,
};

use crate::error::{Error, Result};

/// Symmetric positive definite matrix with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct DenseCovariance {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl DenseCovariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidParameter("covariance matrix must be square".into()));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * matrix.amax().max(1.0) {
            return Err(Error::InvalidParameter("covariance matrix must be symmetric".into()));
        }
        let chol = Cholesky::new(matrix.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { matrix, chol })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter("covariance matrix must be square".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// The diffusion covariance `Gamma` with the operations the transports need.
#[derive(Debug, Clone)]
pub enum CovarianceOperator {
    Identity(usize),
    Dense(DenseCovariance),
    Circulant(CirculantOperator),
}

impl CovarianceOperator {
    pub fn identity(dim: usize) -> Self {
        CovarianceOperator::Identity(dim)
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        DenseCovariance::new(matrix).map(CovarianceOperator::Dense)
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceOperator::Identity(d) => *d,
            CovarianceOperator::Dense(m) => m.matrix.nrows(),
            CovarianceOperator::Circulant(c) => c.dim(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, CovarianceOperator::Identity(_))
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `Gamma x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        match self {
            CovarianceOperator::Identity(_) => Ok(x.to_vec()),
            CovarianceOperator::Dense(m) => Ok((&m.matrix * DVector::from_column_slice(x)).as_slice().to_vec()),
            CovarianceOperator::Circulant(c) => c.apply(x),
        }
    }

    /// `Gamma^{-1} x`.
    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        match self {
            CovarianceOperator::Identity(_) => Ok(x.to_vec()),
            CovarianceOperator::Dense(m) => Ok(m.chol.solve(&DVector::from_column_slice(x)).as_slice().to_vec()),
            CovarianceOperator::Circulant(c) => c.solve(x),
        }
    }

    /// A square root applied to `xi`: the Cholesky factor for dense backings,
    /// the symmetric root for circulant ones.
    pub fn sqrt_apply(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_len(xi)?;
        match self {
            CovarianceOperator::Identity(_) => Ok(xi.to_vec()),
            CovarianceOperator::Dense(m) => Ok((m.chol.l_dirty().lower_triangle() * DVector::from_column_slice(xi))
                .as_slice()
                .to_vec()),
            CovarianceOperator::Circulant(c) => c.sqrt_apply(xi),
        }
    }

    pub fn logdet(&self) -> Result<f64> {
        match self {
            CovarianceOperator::Identity(_) => Ok(0.0),
            CovarianceOperator::Dense(m) => {
                let l = m.chol.l_dirty();
                Ok(2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
            }
            CovarianceOperator::Circulant(c) => c.logdet(),
        }
    }

    /// `trace(Gamma^{-1})`.
    pub fn trace_inverse(&self) -> Result<f64> {
        match self {
            CovarianceOperator::Identity(d) => Ok(*d as f64),
            CovarianceOperator::Dense(m) => Ok(m.chol.inverse().trace()),
            CovarianceOperator::Circulant(c) => c.trace_inverse(),
        }
    }

    /// One draw of `Gamma^{1/2} xi`, `xi ~ N(0, I)`.
    pub fn sqrt_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        NoiseSampler::new(self).sample_into(rng, &mut out);
        out
    }

    /// Dense copy of the operator, built column by column from `apply`.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e)?;
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        Ok(m)
    }
}

/// Stateful `N(0, Gamma)` sampler. Circulant backings produce two
/// independent draws per FFT; the second one is cached for the next call, so
/// a sampler belongs to a single RNG stream.
#[derive(Debug)]
pub struct NoiseSampler<'a> {
    op: &'a CovarianceOperator,
    cached: Option<Vec<f64>>,
    scratch: Vec<f64>,
}

impl<'a> NoiseSampler<'a> {
    pub fn new(op: &'a CovarianceOperator) -> Self {
        Self {
            op,
            cached: None,
            scratch: Vec::new(),
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.op.dim());
        match self.op {
            CovarianceOperator::Identity(_) => {
                out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            }
            CovarianceOperator::Dense(m) => {
                self.scratch.clear();
                self.scratch
                    .extend((0..out.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let l = m.chol.l_dirty();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..=i).map(|j| l[(i, j)] * self.scratch[j]).sum();
                }
            }
            CovarianceOperator::Circulant(c) => match self.cached.take() {
                Some(v) => out.copy_from_slice(&v),
                None => {
                    let (first, second) = c.sample_pair(rng);
                    out.copy_from_slice(&first);
                    self.cached = Some(second);
                }
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.op.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

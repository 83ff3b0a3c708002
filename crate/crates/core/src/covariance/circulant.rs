//! Block-circulant covariance operators diagonalized by the 2D FFT.
//!
//! Two flavors share one representation. A torus operator covers the whole
//! periodic grid, so matrix-vector products, solves and log-determinants are
//! all exact spectral operations. A plane operator is the restriction of a
//! larger circulant embedding to an `H x W` window: products and sampling stay
//! exact, but the inverse of a principal submatrix is not spectral, so solves
//! are refused.

use std::sync::Arc;

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::kernel::Kernel;
use crate::error::{Error, Result};

/// Relative eigenvalue tolerance: values above `-SPECTRUM_RTOL * max` are
/// clipped to zero instead of being reported as negative.
pub const SPECTRUM_RTOL: f64 = 1e-10;

#[derive(Clone)]
struct Fft2d {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2d({}x{})", self.rows, self.cols)
    }
}

impl Fft2d {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    fn len(&self) -> usize {
        self.rows * self.cols
    }

    /// Unnormalized 2D transform of a row-major `rows x cols` buffer.
    fn process(&self, buf: &mut [Complex64], inverse: bool) {
        let (row_fft, col_fft) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row_fft.process(buf);
        let mut t = vec![Complex64::default(); buf.len()];
        transpose(buf, &mut t, self.rows, self.cols);
        col_fft.process(&mut t);
        transpose(&t, buf, self.cols, self.rows);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

fn wrap_lag(p: usize, m: usize) -> usize {
    p.min(m - p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CirculantKind {
    Torus,
    Plane,
}

/// Covariance of `channels` independent identical stationary fields sampled
/// on an `H x W` grid. Vectors are laid out row-major, channel-last.
#[derive(Debug, Clone)]
pub struct CirculantOperator {
    kind: CirculantKind,
    kernel: Kernel,
    height: usize,
    width: usize,
    channels: usize,
    embed_rows: usize,
    embed_cols: usize,
    base_row: Vec<f64>,
    spectrum: Vec<f64>,
    clipped: usize,
    doublings: usize,
    truncation_error: Option<f64>,
    fft: Fft2d,
}

impl CirculantOperator {
    fn from_base_row(
        kind: CirculantKind,
        kernel: Kernel,
        (height, width, channels): (usize, usize, usize),
        (embed_rows, embed_cols): (usize, usize),
        base_row: Vec<f64>,
    ) -> (Self, f64, f64) {
        let fft = Fft2d::new(embed_rows, embed_cols);
        let mut buf: Vec<Complex64> = base_row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.process(&mut buf, false);
        let spectrum: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let max = spectrum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = spectrum.iter().cloned().fold(f64::INFINITY, f64::min);
        let op = Self {
            kind,
            kernel,
            height,
            width,
            channels,
            embed_rows,
            embed_cols,
            base_row,
            spectrum,
            clipped: 0,
            doublings: 0,
            truncation_error: None,
            fft,
        };
        (op, min, max)
    }

    /// Clips eigenvalues below zero. Returns the number of clipped entries.
    fn clip_spectrum(&mut self) -> usize {
        let mut n = 0;
        for v in self.spectrum.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                n += 1;
            }
        }
        self.clipped += n;
        n
    }

    pub fn kind(&self) -> CirculantKind {
        self.kind
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn embedding_shape(&self) -> (usize, usize) {
        (self.embed_rows, self.embed_cols)
    }

    /// Eigenvalues of the (embedding) circulant, after clipping.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn base_row(&self) -> &[f64] {
        &self.base_row
    }

    /// Number of eigenvalues that were clipped to zero.
    pub fn clipped(&self) -> usize {
        self.clipped
    }

    pub fn doublings(&self) -> usize {
        self.doublings
    }

    /// Frobenius norm of the covariance error introduced by eigenvalue
    /// truncation, when truncation happened.
    pub fn truncation_error(&self) -> Option<f64> {
        self.truncation_error
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

    fn is_full(&self) -> bool {
        self.embed_rows == self.height && self.embed_cols == self.width
    }

    /// Applies `spectrum -> factor(spectrum)` in the Fourier domain to every
    /// channel of `x`, embedding and restricting when needed.
    fn spectral_map(&self, x: &[f64], factor: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.fft.len();
        let scale = 1.0 / n as f64;
        let mut out = vec![0.0; self.dim()];
        let mut buf = vec![Complex64::default(); n];
        for c in 0..self.channels {
            buf.iter_mut().for_each(|v| *v = Complex64::default());
            for i in 0..self.height {
                for j in 0..self.width {
                    let src = (i * self.width + j) * self.channels + c;
                    buf[i * self.embed_cols + j] = Complex64::new(x[src], 0.0);
                }
            }
            self.fft.process(&mut buf, false);
            for (v, &lam) in buf.iter_mut().zip(&self.spectrum) {
                *v *= factor(lam) * scale;
            }
            self.fft.process(&mut buf, true);
            for i in 0..self.height {
                for j in 0..self.width {
                    let dst = (i * self.width + j) * self.channels + c;
                    out[dst] = buf[i * self.embed_cols + j].re;
                }
            }
        }
        out
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        Ok(self.spectral_map(x, |lam| lam))
    }

    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        if !self.is_full() {
            return Err(Error::Unsupported("solve on a plane embedding"));
        }
        if self.spectrum.iter().any(|&l| l <= 0.0) {
            return Err(Error::SingularOperator);
        }
        Ok(self.spectral_map(x, |lam| 1.0 / lam))
    }

    /// Symmetric square root `C^{1/2} x`.
    pub fn sqrt_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        if !self.is_full() {
            return Err(Error::Unsupported("sqrt_apply on a plane embedding"));
        }
        Ok(self.spectral_map(x, f64::sqrt))
    }

    pub fn logdet(&self) -> Result<f64> {
        if !self.is_full() {
            return Err(Error::Unsupported("logdet on a plane embedding"));
        }
        if self.spectrum.iter().any(|&l| l <= 0.0) {
            return Err(Error::SingularOperator);
        }
        let per_channel: f64 = self.spectrum.iter().map(|l| l.ln()).sum();
        Ok(per_channel * self.channels as f64)
    }

    pub fn trace_inverse(&self) -> Result<f64> {
        if !self.is_full() {
            return Err(Error::Unsupported("trace_inverse on a plane embedding"));
        }
        if self.spectrum.iter().any(|&l| l <= 0.0) {
            return Err(Error::SingularOperator);
        }
        let per_channel: f64 = self.spectrum.iter().map(|l| 1.0 / l).sum();
        Ok(per_channel * self.channels as f64)
    }

    /// Draws two independent `N(0, C)` vectors from a single complex FFT per
    /// channel: the real and imaginary parts of `F (sqrt(lambda) * z) / sqrt(n)`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let n = self.fft.len();
        let scale = 1.0 / (n as f64).sqrt();
        let mut first = vec![0.0; self.dim()];
        let mut second = vec![0.0; self.dim()];
        let mut buf = vec![Complex64::default(); n];
        for c in 0..self.channels {
            for (v, &lam) in buf.iter_mut().zip(&self.spectrum) {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *v = Complex64::new(re, im) * (lam.sqrt() * scale);
            }
            self.fft.process(&mut buf, false);
            for i in 0..self.height {
                for j in 0..self.width {
                    let dst = (i * self.width + j) * self.channels + c;
                    let v = buf[i * self.embed_cols + j];
                    first[dst] = v.re;
                    second[dst] = v.im;
                }
            }
        }
        (first, second)
    }

    /// Covariance between two grid cells of the same channel, as realized by
    /// the (possibly truncated) operator.
    pub fn realized_covariance(&self, lag_rows: isize, lag_cols: isize) -> f64 {
        let realized = self.realized_base_row();
        let p = lag_rows.rem_euclid(self.embed_rows as isize) as usize;
        let q = lag_cols.rem_euclid(self.embed_cols as isize) as usize;
        realized[p * self.embed_cols + q]
    }

    fn realized_base_row(&self) -> Vec<f64> {
        let n = self.fft.len();
        let mut buf: Vec<Complex64> = self
            .spectrum
            .iter()
            .map(|&l| Complex64::new(l / n as f64, 0.0))
            .collect();
        self.fft.process(&mut buf, true);
        buf.iter().map(|c| c.re).collect()
    }
}

fn check_grid(height: usize, width: usize, channels: usize) -> Result<()> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid must be at least 2x2, got {height}x{width}"
        )));
    }
    if channels == 0 {
        return Err(Error::InvalidParameter("channels must be >= 1".into()));
    }
    Ok(())
}

/// Periodic covariance on the `H x W` torus: pixel pitch `1/H` and `1/W`, with
/// per-axis distance `min(d, 1 - d)`.
pub fn build_torus_operator(kernel: Kernel, height: usize, width: usize, channels: usize) -> Result<CirculantOperator> {
    build_torus_operator_with(kernel, height, width, channels, false)
}

/// As [`build_torus_operator`], optionally clipping negative eigenvalues
/// instead of failing.
pub fn build_torus_operator_with(
    kernel: Kernel,
    height: usize,
    width: usize,
    channels: usize,
    allow_truncation: bool,
) -> Result<CirculantOperator> {
    kernel.validate()?;
    check_grid(height, width, channels)?;
    let mut base = vec![0.0; height * width];
    for p in 0..height {
        for q in 0..width {
            let dy = wrap_lag(p, height) as f64 / height as f64;
            let dx = wrap_lag(q, width) as f64 / width as f64;
            base[p * width + q] = kernel.covariance((dy * dy + dx * dx).sqrt());
        }
    }
    let (mut op, min, max) = CirculantOperator::from_base_row(
        CirculantKind::Torus,
        kernel,
        (height, width, channels),
        (height, width),
        base,
    );
    let tol = SPECTRUM_RTOL * max;
    if min < -tol {
        if !allow_truncation {
            return Err(Error::NegativeSpectrum { min, tol });
        }
        let before = op.spectrum.clone();
        op.clip_spectrum();
        // Parseval: the Frobenius norm of a circulant is the l2 norm of its
        // spectrum, per channel.
        let sq: f64 = before.iter().zip(&op.spectrum).map(|(a, b)| (a - b).powi(2)).sum();
        op.truncation_error = Some((sq * channels as f64).sqrt());
        warn!("torus spectrum truncated: min eigenvalue {min:e}");
    } else if min < 0.0 {
        let n = op.clip_spectrum();
        warn!("clipped {n} slightly negative torus eigenvalues (min {min:e})");
    }
    Ok(op)
}

/// Exact covariance on the plane patch, obtained by embedding the
/// block-Toeplitz covariance of the `H x W` grid into a block circulant.
/// Each side starts at the smallest 5-smooth length `>= 2n - 2` (so the FFTs
/// stay fast) and is doubled until the spectrum is nonnegative or
/// `max_doublings` is reached.
pub fn embed_plane_operator(
    kernel: Kernel,
    height: usize,
    width: usize,
    channels: usize,
    max_doublings: usize,
    allow_truncation: bool,
) -> Result<CirculantOperator> {
    kernel.validate()?;
    check_grid(height, width, channels)?;
    let mut last_min = 0.0;
    for k in 0..=max_doublings {
        let rows = smooth_length(2 * height - 2) << k;
        let cols = smooth_length(2 * width - 2) << k;
        let mut base = vec![0.0; rows * cols];
        for p in 0..rows {
            for q in 0..cols {
                let dy = wrap_lag(p, rows) as f64 / height as f64;
                let dx = wrap_lag(q, cols) as f64 / width as f64;
                base[p * cols + q] = kernel.covariance((dy * dy + dx * dx).sqrt());
            }
        }
        let (mut op, min, max) = CirculantOperator::from_base_row(
            CirculantKind::Plane,
            kernel,
            (height, width, channels),
            (rows, cols),
            base,
        );
        op.doublings = k;
        let tol = SPECTRUM_RTOL * max;
        last_min = min;
        if min >= -tol {
            if min < 0.0 {
                let n = op.clip_spectrum();
                warn!("clipped {n} slightly negative embedding eigenvalues (min {min:e})");
            }
            return Ok(op);
        }
        if k == max_doublings && allow_truncation {
            op.clip_spectrum();
            op.truncation_error = Some(plane_truncation_error(&op));
            warn!("plane embedding truncated after {k} doublings: min eigenvalue {min:e}");
            return Ok(op);
        }
    }
    Err(Error::EmbeddingFailed {
        min: last_min,
        doublings: max_doublings,
    })
}

/// Smallest `m >= n` whose only prime factors are 2, 3 and 5.
fn smooth_length(n: usize) -> usize {
    (n.max(1)..)
        .find(|&m| {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .unwrap()
}

/// `||C_truncated - C_target||_F` over the `H x W` window, all channels.
fn plane_truncation_error(op: &CirculantOperator) -> f64 {
    let realized = op.realized_base_row();
    let mut sq = 0.0;
    let (h, w) = (op.height as isize, op.width as isize);
    for dy in -(h - 1)..h {
        for dx in -(w - 1)..w {
            let p = dy.rem_euclid(op.embed_rows as isize) as usize;
            let q = dx.rem_euclid(op.embed_cols as isize) as usize;
            let idx = p * op.embed_cols + q;
            let pairs = ((h - dy.abs()) * (w - dx.abs())) as f64;
            sq += pairs * (realized[idx] - op.base_row[idx]).powi(2);
        }
    }
    (sq * op.channels as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn torus_dense(kernel: Kernel, h: usize, w: usize) -> Vec<Vec<f64>> {
        let n = h * w;
        let mut m = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..n {
                let (ia, ja) = (a / w, a % w);
                let (ib, jb) = (b / w, b % w);
                let coord = |i: usize, len: usize| (i as f64 + 0.5) / len as f64;
                let mut dy = (coord(ia, h) - coord(ib, h)).abs();
                let mut dx = (coord(ja, w) - coord(jb, w)).abs();
                dy = dy.min(1.0 - dy);
                dx = dx.min(1.0 - dx);
                m[a][b] = kernel.covariance((dy * dy + dx * dx).sqrt());
            }
        }
        m
    }

    fn materialize(op: &CirculantOperator) -> Vec<Vec<f64>> {
        let n = op.dim();
        (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                op.apply(&e).unwrap()
            })
            .collect()
    }

    #[test]
    fn white_noise_torus_has_unit_spectrum() {
        let op = build_torus_operator(Kernel::white_noise(1.0), 5, 7, 2).unwrap();
        assert!(op.spectrum().iter().all(|&l| (l - 1.0).abs() < 1e-12));
        assert_eq!(op.logdet().unwrap().abs() < 1e-12, true);
    }

    #[test]
    fn torus_matches_dense_kernel_matrix() {
        let kernel = Kernel::exponential(1.3, 0.3);
        let op = build_torus_operator(kernel, 4, 4, 1).unwrap();
        let dense = torus_dense(kernel, 4, 4);
        let mat = materialize(&op);
        for a in 0..16 {
            for b in 0..16 {
                assert!((mat[b][a] - dense[a][b]).abs() < 1e-12);
                assert!((mat[a][b] - mat[b][a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fitted_exponential_embeds_exactly_on_the_plane() {
        let k = Kernel::exponential(0.063, 0.205);
        let op = embed_plane_operator(k, 32, 32, 3, 0, false).unwrap();
        assert_eq!(op.clipped(), 0);
        assert_eq!(op.doublings(), 0);
        assert!(op.truncation_error().is_none());
        // The wrapped-distance torus kernel is not positive definite in 2D
        // at this length scale: a small negative tail has to be clipped.
        let err = build_torus_operator(k, 32, 32, 3).unwrap_err();
        assert!(matches!(err, Error::NegativeSpectrum { .. }), "{err:?}");
        let torus = build_torus_operator_with(k, 32, 32, 3, true).unwrap();
        assert!(torus.clipped() > 0);
        assert!(torus.truncation_error().unwrap() > 0.0);
    }

    #[test]
    fn apply_solve_roundtrip() {
        let op = build_torus_operator(Kernel::exponential(1.0, 0.2), 8, 6, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..op.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let y = op.solve(&op.apply(&x).unwrap()).unwrap();
        let z = op.apply(&op.solve(&x).unwrap()).unwrap();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let e1 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let e2 = x.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(e1 / norm < 1e-8 && e2 / norm < 1e-8);
    }

    #[test]
    fn sqrt_apply_squares_to_apply() {
        let op = build_torus_operator(Kernel::rbf(1.0, 0.15), 6, 6, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..op.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let twice = op.sqrt_apply(&op.sqrt_apply(&x).unwrap()).unwrap();
        let once = op.apply(&x).unwrap();
        for (a, b) in twice.iter().zip(&once) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn white_noise_plane_embedding_is_minimal() {
        let op = embed_plane_operator(Kernel::white_noise(2.0), 5, 4, 1, 3, false).unwrap();
        assert_eq!(op.embedding_shape(), (8, 6));
        assert_eq!(op.doublings(), 0);
        assert!(op.spectrum().iter().all(|&l| (l - 2.0).abs() < 1e-12));
    }

    #[test]
    fn plane_apply_matches_dense_toeplitz() {
        let kernel = Kernel::exponential(1.0, 0.2);
        let (h, w) = (5, 4);
        let op = embed_plane_operator(kernel, h, w, 1, 2, false).unwrap();
        let mat = materialize(&op);
        for a in 0..h * w {
            for b in 0..h * w {
                let dy = ((a / w) as f64 - (b / w) as f64) / h as f64;
                let dx = ((a % w) as f64 - (b % w) as f64) / w as f64;
                let want = kernel.covariance((dy * dy + dx * dx).sqrt());
                assert!((mat[b][a] - want).abs() < 1e-12);
            }
        }
        assert!(op.solve(&vec![0.0; h * w]).is_err());
    }

    #[test]
    fn singular_solve_is_reported() {
        // An RBF with a long length scale on a coarse torus has eigenvalues
        // that are zero to machine precision.
        let op = build_torus_operator_with(Kernel::rbf(1.0, 2.0), 8, 8, 1, true).unwrap();
        assert!(op.clipped() > 0);
        assert_eq!(op.solve(&vec![1.0; 64]), Err(Error::SingularOperator));
    }
}

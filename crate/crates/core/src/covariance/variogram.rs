//! Empirical semivariograms and Cressie-weighted least-squares fits.

use super::field::Field;
use super::kernel::Kernel;
use crate::error::{Error, Result};

/// Binned semivariogram of a single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalVariogram {
    /// Mean pair distance in each retained bin.
    pub lags: Vec<f64>,
    pub gamma: Vec<f64>,
    pub counts: Vec<u64>,
}

impl EmpiricalVariogram {
    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

/// Per-channel empirical semivariograms of `image`, averaging
/// `(x_{s'} - x_s)^2 / 2` over all pixel pairs whose unit-domain distance
/// falls in each of `n_bins` equal-width bins on `(0, max_lag]`.
pub fn empirical_variogram(image: &Field, n_bins: usize, max_lag: f64) -> Result<Vec<EmpiricalVariogram>> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    if h < 2 || w < 2 {
        return Err(Error::InvalidParameter(format!(
            "variogram needs at least a 2x2 image, got {h}x{w}"
        )));
    }
    if n_bins == 0 || !(max_lag > 0.0) {
        return Err(Error::InvalidParameter(
            "variogram needs n_bins >= 1 and max_lag > 0".into(),
        ));
    }
    let mut sums = vec![vec![0.0; n_bins]; c];
    let mut dist_sums = vec![0.0; n_bins];
    let mut counts = vec![0u64; n_bins];
    let (hf, wf) = (h as f64, w as f64);

    // Each unordered pair once: di > 0 with any dj, or di == 0 with dj > 0.
    for di in 0..h as isize {
        let dj_start = if di == 0 { 1 } else { -(w as isize - 1) };
        for dj in dj_start..w as isize {
            let dist = ((di as f64 / hf).powi(2) + (dj as f64 / wf).powi(2)).sqrt();
            if dist > max_lag {
                continue;
            }
            let bin = ((dist / max_lag * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
            let j_lo = (-dj).max(0) as usize;
            let j_hi = (w as isize - dj.max(0)) as usize;
            let mut pairs = 0u64;
            for i in 0..h - di as usize {
                let i2 = i + di as usize;
                for j in j_lo..j_hi {
                    let j2 = (j as isize + dj) as usize;
                    for (ch, sum) in sums.iter_mut().enumerate() {
                        let d = image.get(i2, j2, ch) - image.get(i, j, ch);
                        sum[bin] += 0.5 * d * d;
                    }
                    pairs += 1;
                }
            }
            counts[bin] += pairs;
            dist_sums[bin] += pairs as f64 * dist;
        }
    }

    Ok(sums
        .into_iter()
        .map(|sum| {
            let mut v = EmpiricalVariogram {
                lags: Vec::new(),
                gamma: Vec::new(),
                counts: Vec::new(),
            };
            for b in 0..n_bins {
                if counts[b] == 0 {
                    continue;
                }
                v.lags.push(dist_sums[b] / counts[b] as f64);
                v.gamma.push(sum[b] / counts[b] as f64);
                v.counts.push(counts[b]);
            }
            v
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariogramFamily {
    Exponential,
    Rbf,
}

impl VariogramFamily {
    pub fn kernel(self, sill: f64, length_scale: f64) -> Kernel {
        match self {
            VariogramFamily::Exponential => Kernel::exponential(sill, length_scale),
            VariogramFamily::Rbf => Kernel::rbf(sill, length_scale),
        }
    }
}

/// Search interval for the length scale, in unit-domain distance.
pub const LENGTH_SCALE_BOUNDS: (f64, f64) = (1e-3, 10.0);

const MAX_ITERATIONS: usize = 5000;
const SIMPLEX_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct VariogramFit {
    pub family: VariogramFamily,
    pub kernel: Kernel,
    pub objective: f64,
    pub iterations: usize,
    /// The length scale sits on the lower search bound; the data carries no
    /// spatial dependence the family can express.
    pub at_lower_bound: bool,
}

/// `sum_h N(h) / gamma_model(h)^2 * (gamma_hat(h) - gamma_model(h))^2`.
pub fn wls_objective(emp: &EmpiricalVariogram, family: VariogramFamily, sill: f64, length_scale: f64) -> f64 {
    let kernel = family.kernel(sill, length_scale);
    emp.lags
        .iter()
        .zip(&emp.gamma)
        .zip(&emp.counts)
        .map(|((&h, &g), &n)| {
            let model = kernel.semivariogram(h);
            n as f64 / (model * model) * (g - model).powi(2)
        })
        .sum()
}

fn decode(u: [f64; 2]) -> (f64, f64) {
    let (lo, hi) = LENGTH_SCALE_BOUNDS;
    (u[0].exp(), u[1].exp().clamp(lo, hi))
}

/// Weighted least-squares fit of `family` to `emp`, seeded from a grid over
/// `(sill, length_scale)` and refined by Nelder-Mead in log space.
pub fn fit_variogram_wls(emp: &EmpiricalVariogram, family: VariogramFamily) -> Result<VariogramFit> {
    if emp.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "variogram fit needs at least 3 bins, got {}",
            emp.len()
        )));
    }
    let scale = emp
        .gamma
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE.sqrt());
    let objective = |u: [f64; 2]| {
        let (s, l) = decode(u);
        let f = wls_objective(emp, family, s, l);
        if f.is_finite() {
            f
        } else {
            f64::INFINITY
        }
    };

    let mut best = ([0.0; 2], f64::INFINITY);
    for ls in seed_grid_length_scales() {
        for m in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let u = [(scale * m).ln(), ls.ln()];
            let f = objective(u);
            if f < best.1 {
                best = (u, f);
            }
        }
    }
    let (mut u, mut f, iterations, converged) = nelder_mead(objective, best.0, 0.1);
    // A flat variogram leaves the objective constant for every length scale
    // below the bin resolution; report the lower bound on that plateau.
    let floor = [u[0], LENGTH_SCALE_BOUNDS.0.ln()];
    let f_floor = objective(floor);
    if f_floor <= f + 1e-12 * f.max(1.0) {
        u = floor;
        f = f_floor.min(f);
    }
    let (sill, length_scale) = decode(u);
    if !converged {
        return Err(Error::FitNotConverged {
            iterations,
            sill,
            length_scale,
        });
    }
    Ok(VariogramFit {
        family,
        kernel: family.kernel(sill, length_scale),
        objective: f,
        iterations,
        at_lower_bound: length_scale <= LENGTH_SCALE_BOUNDS.0 * (1.0 + 1e-9),
    })
}

/// Length scales of the seeding grid.
pub(crate) fn seed_grid_length_scales() -> impl Iterator<Item = f64> {
    (0..13).map(|k| 0.005 * 2f64.powf(k as f64 * 0.75))
}

fn nelder_mead(f: impl Fn([f64; 2]) -> f64, x0: [f64; 2], step: f64) -> ([f64; 2], f64, usize, bool) {
    let mut simplex = [x0, [x0[0] + step, x0[1]], [x0[0], x0[1] + step]];
    let mut values = simplex.map(&f);
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];

    for it in 0..MAX_ITERATIONS {
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);

        let diameter = (1..3)
            .map(|i| {
                (simplex[i][0] - simplex[0][0])
                    .abs()
                    .max((simplex[i][1] - simplex[0][1]).abs())
            })
            .fold(0.0, f64::max);
        if diameter < SIMPLEX_TOL {
            return (simplex[0], values[0], it, true);
        }

        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let reflected = lerp(centroid, simplex[2], -1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = lerp(centroid, simplex[2], -2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let (contracted, fc) = if fr < values[2] {
                let c = lerp(centroid, reflected, 0.5);
                (c, f(c))
            } else {
                let c = lerp(centroid, simplex[2], 0.5);
                (c, f(c))
            };
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(simplex[0], simplex[i], 0.5);
                    values[i] = f(simplex[i]);
                }
            }
        }
    }
    let i = (0..3).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[i], values[i], MAX_ITERATIONS, false)
}

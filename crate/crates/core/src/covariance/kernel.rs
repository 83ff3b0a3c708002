use crate::error::{Error, Result};

/// Stationary isotropic covariance function on the unit square.
///
/// Distances are measured in unit-domain coordinates, so a length scale of
/// `0.2` spans a fifth of the image side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    WhiteNoise { variance: f64 },
    Exponential { variance: f64, length_scale: f64 },
    Rbf { variance: f64, length_scale: f64 },
}

impl Kernel {
    pub fn white_noise(variance: f64) -> Self {
        Kernel::WhiteNoise { variance }
    }

    pub fn exponential(variance: f64, length_scale: f64) -> Self {
        Kernel::Exponential { variance, length_scale }
    }

    pub fn rbf(variance: f64, length_scale: f64) -> Self {
        Kernel::Rbf { variance, length_scale }
    }

    pub fn validate(&self) -> Result<()> {
        let (variance, length_scale) = match *self {
            Kernel::WhiteNoise { variance } => (variance, 1.0),
            Kernel::Exponential { variance, length_scale } | Kernel::Rbf { variance, length_scale } => {
                (variance, length_scale)
            }
        };
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel variance must be positive, got {variance}"
            )));
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel length scale must be positive, got {length_scale}"
            )));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Kernel::WhiteNoise { variance } | Kernel::Exponential { variance, .. } | Kernel::Rbf { variance, .. } => {
                variance
            }
        }
    }

    pub fn length_scale(&self) -> Option<f64> {
        match *self {
            Kernel::WhiteNoise { .. } => None,
            Kernel::Exponential { length_scale, .. } | Kernel::Rbf { length_scale, .. } => Some(length_scale),
        }
    }

    /// Covariance at Euclidean distance `dist`.
    pub fn covariance(&self, dist: f64) -> f64 {
        match *self {
            Kernel::WhiteNoise { variance } => {
                if dist == 0.0 {
                    variance
                } else {
                    0.0
                }
            }
            Kernel::Exponential { variance, length_scale } => variance * (-dist / length_scale).exp(),
            Kernel::Rbf { variance, length_scale } => {
                variance * (-dist * dist / (2.0 * length_scale * length_scale)).exp()
            }
        }
    }

    /// Semivariogram `k(0) - k(h)`.
    pub fn semivariogram(&self, h: f64) -> f64 {
        self.covariance(0.0) - self.covariance(h)
    }
}

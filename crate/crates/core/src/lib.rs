//! Diffusion bridge mixture transport (DBMT) and diffusion time-reversal
//! transport (DTRT) for time-changed Brownian and Ornstein-Uhlenbeck SDEs.
//!
//! - [`sde`]: transition and bridge laws in closed form.
//! - [`covariance`]: the diffusion covariance `Gamma`, including FFT-backed
//!   stationary fields, and variogram fitting.
//! - [`transport`]: exact drifts, weights, couplings.
//! - [`objectives`], [`regressor`]: training losses and a small MLP.
//! - [`sampler`]: Euler integration and path statistics.

pub mod covariance;
pub mod error;
pub mod linalg;
pub mod objectives;
pub mod parallel;
pub mod regressor;
pub mod sampler;
pub mod sde;
pub mod transport;

pub use error::{Error, Result};

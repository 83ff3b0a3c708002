//! A small fully connected network `s(x, t)` with a hand-written backward
//! pass.
//!
//! Input features are `x`, the normalized time `t / tau`, and `F` sinusoidal
//! pairs `sin(2^k pi t / tau), cos(2^k pi t / tau)`. Hidden layers use tanh
//! or softplus; the output layer is linear with width `D`.

mod checkpoint;
mod train;

use rand::Rng;

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, LrSchedule, OptimizerKind, OptimizerState, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            // ln(1 + e^z) without overflow
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }

    /// Derivative from the pre-activation `z` and the activation `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_features: usize,
    pub tau: f64,
}

impl NetSpec {
    /// Two hidden layers of 64 tanh units and four sinusoidal time pairs.
    pub fn default_for(dim: usize, tau: f64) -> Self {
        Self {
            dim,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            time_features: 4,
            tau,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dim + 1 + 2 * self.time_features
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("network widths must be >= 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "network tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.hidden);
        w.push(self.dim);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl Layer {
    fn weights_len(&self) -> usize {
        self.fan_in * self.fan_out
    }
}

/// Per-layer pre-activations and activations of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

impl Mlp {
    /// All parameters zero; the output is identically zero.
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for p in widths.windows(2) {
            layers.push(Layer {
                fan_in: p[0],
                fan_out: p[1],
                offset,
            });
            offset += p[0] * p[1] + p[1];
        }
        Ok(Self {
            spec,
            layers,
            params: vec![0.0; offset],
        })
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn random<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        for l in net.layers.clone() {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for w in &mut net.params[l.offset..l.offset + l.weights_len()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_norm(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    pub fn features_into(&self, x: &[f64], t: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(x);
        let s = t / self.spec.tau;
        out.push(s);
        let mut freq = std::f64::consts::PI;
        for _ in 0..self.spec.time_features {
            let (sin, cos) = (freq * s).sin_cos();
            out.push(sin);
            out.push(cos);
            freq *= 2.0;
        }
    }

    /// Forward pass keeping what the backward pass needs.
    pub fn forward_trace(&self, x: &[f64], t: f64, trace: &mut Trace) {
        debug_assert_eq!(x.len(), self.spec.dim);
        let n = self.layers.len();
        trace.acts.resize_with(n + 1, Vec::new);
        trace.pre.resize_with(n, Vec::new);
        let mut input = std::mem::take(&mut trace.acts[0]);
        self.features_into(x, t, &mut input);
        trace.acts[0] = input;
        for (k, l) in self.layers.iter().enumerate() {
            let (w, b) = self.params[l.offset..l.offset + l.weights_len() + l.fan_out].split_at(l.weights_len());
            let (before, after) = trace.acts.split_at_mut(k + 1);
            let a_in = &before[k];
            let z = &mut trace.pre[k];
            z.clear();
            z.extend(
                w.chunks_exact(l.fan_in)
                    .zip(b)
                    .map(|(row, bi)| bi + row.iter().zip(a_in).map(|(p, q)| p * q).sum::<f64>()),
            );
            let a_out = &mut after[0];
            a_out.clear();
            if k + 1 < n {
                let act = self.spec.activation;
                a_out.extend(z.iter().map(|&zi| act.apply(zi)));
            } else {
                a_out.extend_from_slice(z);
            }
        }
    }

    pub fn forward(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut trace = Trace::default();
        self.forward_trace(x, t, &mut trace);
        trace.acts.pop().unwrap_or_default()
    }

    /// Accumulates `d out / d params` contracted with `d_out` into `grad`.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = d_out.to_vec();
        let mut next = Vec::new();
        for k in (0..self.layers.len()).rev() {
            let l = self.layers[k];
            let a_in = &trace.acts[k];
            let (gw, gb) = grad[l.offset..l.offset + l.weights_len() + l.fan_out].split_at_mut(l.weights_len());
            for ((row, gbi), &d) in gw.chunks_exact_mut(l.fan_in).zip(gb.iter_mut()).zip(&delta) {
                *gbi += d;
                row.iter_mut().zip(a_in).for_each(|(g, a)| *g += d * a);
            }
            if k == 0 {
                break;
            }
            let w = &self.params[l.offset..l.offset + l.weights_len()];
            next.clear();
            next.resize(l.fan_in, 0.0);
            for (row, &d) in w.chunks_exact(l.fan_in).zip(&delta) {
                next.iter_mut().zip(row).for_each(|(n, wi)| *n += d * wi);
            }
            let act = self.spec.activation;
            for ((n, &z), &a) in next.iter_mut().zip(&trace.pre[k - 1]).zip(&trace.acts[k]) {
                *n *= act.derivative(z, a);
            }
            std::mem::swap(&mut delta, &mut next);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(activation: Activation) -> NetSpec {
        NetSpec {
            dim: 2,
            hidden: vec![5, 4],
            activation,
            time_features: 2,
            tau: 1.0,
        }
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(NetSpec::default_for(3, 1.0)).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5], 0.3), vec![0.0; 3]);
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = small_spec(Activation::Tanh);
        // inputs 2 + 1 + 4 = 7
        assert_eq!(spec.param_count(), 7 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(Mlp::zeros(spec.clone()).unwrap().param_count(), spec.param_count());
    }

    #[test]
    fn forward_is_reproducible() {
        let a = Mlp::random(small_spec(Activation::Tanh), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = Mlp::random(small_spec(Activation::Tanh), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = [0.3, -0.9];
        assert_eq!(a.forward(&x, 0.4), b.forward(&x, 0.4));
        assert_eq!(a.forward(&x, 0.4), a.forward(&x, 0.4));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Softplus] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut net = Mlp::random(small_spec(act), &mut rng).unwrap();
            for p in net.params_mut() {
                *p += rng.random_range(-0.3..0.3);
            }
            assert!(net.param_count() <= 200);
            let (x, t) = ([0.7, -0.4], 0.35);
            let c = [0.8, -1.3];
            let objective = |n: &Mlp| n.forward(&x, t).iter().zip(&c).map(|(o, ci)| o * ci).sum::<f64>();
            let mut trace = Trace::default();
            net.forward_trace(&x, t, &mut trace);
            let mut grad = vec![0.0; net.param_count()];
            net.backward(&trace, &c, &mut grad);
            let eps = 1e-5;
            for i in 0..net.param_count() {
                let orig = net.params[i];
                net.params[i] = orig + eps;
                let fp = objective(&net);
                net.params[i] = orig - eps;
                let fm = objective(&net);
                net.params[i] = orig;
                let fd = (fp - fm) / (2.0 * eps);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
                assert!(rel < 1e-5, "{act:?} param {i}: {} vs {fd}", grad[i]);
            }
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(Activation::Softplus.apply(1000.0), 1000.0);
        assert!(Activation::Softplus.apply(-1000.0) >= 0.0);
        assert!((Activation::Softplus.apply(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}

//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! magic          8 bytes  "DBMTNET\0"
//! version        u32      1
//! dim            u32
//! time_features  u32
//! activation     u32      0 = tanh, 1 = softplus
//! tau            f64
//! n_hidden       u32
//! widths         u32 x n_hidden
//! param_count    u64
//! params         f64 x param_count, layer by layer: weights row-major
//!                (out x in), then biases
//! ```

use std::io::{Read, Write};

use super::{Activation, Mlp, NetSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DBMTNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(net: &Mlp, mut out: W) -> Result<()> {
    let spec = net.spec();
    let mut buf = Vec::with_capacity(64 + 8 * net.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.time_features as u32).to_le_bytes());
    let act: u32 = match spec.activation {
        Activation::Tanh => 0,
        Activation::Softplus => 1,
    };
    buf.extend_from_slice(&act.to_le_bytes());
    buf.extend_from_slice(&spec.tau.to_le_bytes());
    buf.extend_from_slice(&(spec.hidden.len() as u32).to_le_bytes());
    for &w in &spec.hidden {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf).map_err(io_err)
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Mlp> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io_err)?;
    let mut c = Cursor(&bytes);
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dim = c.u32()? as usize;
    let time_features = c.u32()? as usize;
    let activation = match c.u32()? {
        0 => Activation::Tanh,
        1 => Activation::Softplus,
        a => return Err(Error::Checkpoint(format!("unknown activation code {a}"))),
    };
    let tau = c.f64()?;
    let n_hidden = c.u32()? as usize;
    let hidden = (0..n_hidden)
        .map(|_| c.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let spec = NetSpec {
        dim,
        hidden,
        activation,
        time_features,
        tau,
    };
    let count = c.u64()? as usize;
    if count != spec.param_count() {
        return Err(Error::Checkpoint(format!(
            "header describes {} parameters, file declares {count}",
            spec.param_count()
        )));
    }
    let params = (0..count).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    if !c.0.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", c.0.len())));
    }
    Mlp::from_params(spec, params).map_err(|e| Error::Checkpoint(e.to_string()))
}

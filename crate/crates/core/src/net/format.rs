//! Versioned binary network format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic     4 bytes  "HSNT"
//! version   u32      1
//! rank      u32      number of input extents
//! dims      u64 * rank
//! layers    u32
//! per layer:
//!   kind        u8   0 = dense, 1 = conv2d
//!   dense:      u64 inputs, u64 outputs
//!   conv2d:     u64 in_channels, u64 out_channels, u64 k1, u64 k2
//!   activation  u8   0 identity, 1 tanh, 2 relu, 3 elu, 4 softmax
//!   has_bias    u8   0 or 1
//! per layer, in order:
//!   count   u64      number of weights (rows * cols)
//!   values  f64 * count, row-major
//! ```

use super::{Activation, LayerKind, LayerSpec, Network};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HSNT";
pub const VERSION: u32 = 1;

fn act_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Tanh => 1,
        Activation::Relu => 2,
        Activation::Elu => 3,
        Activation::Softmax => 4,
    }
}

fn act_from(code: u8) -> Result<Activation> {
    Ok(match code {
        0 => Activation::Identity,
        1 => Activation::Tanh,
        2 => Activation::Relu,
        3 => Activation::Elu,
        4 => Activation::Softmax,
        c => bail!(Format, "unknown activation code {c}"),
    })
}

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.input_shape().len() as u32).to_le_bytes());
    for &d in net.input_shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(net.num_layers() as u32).to_le_bytes());
    for spec in net.layers() {
        match spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                out.push(0);
                for v in [inputs, outputs] {
                    out.extend_from_slice(&(v as u64).to_le_bytes());
                }
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                k1,
                k2,
            } => {
                out.push(1);
                for v in [in_channels, out_channels, k1, k2] {
                    out.extend_from_slice(&(v as u64).to_le_bytes());
                }
            }
        }
        out.push(act_code(spec.activation));
        out.push(u8::from(spec.has_bias));
    }
    for w in net.weights() {
        out.extend_from_slice(&(w.len() as u64).to_le_bytes());
        for v in w.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            bail!(Format, "truncated network file at byte {}", self.pos);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).or_else(|_| bail!(Format, "extent {v} does not fit in memory"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        bail!(Format, "not a network file (bad magic)");
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!(Format, "unsupported network format version {version}");
    }
    let rank = r.u32()? as usize;
    let input_shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let n_layers = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = match r.u8()? {
            0 => LayerKind::Dense {
                inputs: r.usize()?,
                outputs: r.usize()?,
            },
            1 => LayerKind::Conv2d {
                in_channels: r.usize()?,
                out_channels: r.usize()?,
                k1: r.usize()?,
                k2: r.usize()?,
            },
            k => bail!(Format, "unknown layer kind {k}"),
        };
        let activation = act_from(r.u8()?)?;
        let has_bias = match r.u8()? {
            0 => false,
            1 => true,
            b => bail!(Format, "bad bias flag {b}"),
        };
        specs.push(LayerSpec {
            kind,
            activation,
            has_bias,
        });
    }
    let mut weights = Vec::with_capacity(n_layers);
    for spec in &specs {
        let count = r.usize()?;
        let [rows, cols] = spec.weight_shape();
        if count != rows * cols {
            bail!(Format, "layer {spec} stores {count} weights, expected {}", rows * cols);
        }
        let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        weights.push(Tensor::new(vec![rows, cols], data)?);
    }
    if r.pos != bytes.len() {
        bail!(Format, "{} trailing bytes after network", bytes.len() - r.pos);
    }
    Network::new(input_shape, specs, weights)
}

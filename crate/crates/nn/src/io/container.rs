//! `CHT1` model container, all integers and weights little-endian:
//!
//! ```text
//! "CHT1" | version u32 | layer count u32 | body length u64
//! per layer: kind u8 | rank u8 | dims u32 × rank | binary32 payload
//! ```
//!
//! Dims and payload by kind: dense `[out, in]`, weights then biases;
//! conv `[K, C, R, S, stride, pad]`, weights then biases; pooling
//! `[size, stride]`; batch norm `[C]`, then γ, β, μ, σ² and ε; ReLU,
//! softmax and flatten carry nothing.

use std::fs;
use std::path::Path;

use super::{file_err, IoError};
use crate::network::{BatchNorm, Conv2d, Dense, Layer, Network, Pool};

pub const MAGIC: [u8; 4] = *b"CHT1";
pub const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 4 + 8;

fn kind_code(l: &Layer) -> u8 {
    match l {
        Layer::Dense(_) => 0,
        Layer::Conv2d(_) => 1,
        Layer::MaxPool(_) => 2,
        Layer::AvgPool(_) => 3,
        Layer::BatchNorm(_) => 4,
        Layer::ReLU => 5,
        Layer::Softmax => 6,
        Layer::Flatten => 7,
    }
}

fn dims_and_payload(l: &Layer) -> (Vec<usize>, Vec<&[f64]>, Option<f64>) {
    match l {
        Layer::Dense(d) => (vec![d.outputs, d.inputs], vec![&d.weight, &d.bias], None),
        Layer::Conv2d(c) => (
            vec![c.out_channels, c.in_channels, c.kernel_h, c.kernel_w, c.stride, c.pad],
            vec![&c.weight, &c.bias],
            None,
        ),
        Layer::MaxPool(p) | Layer::AvgPool(p) => (vec![p.size, p.stride], vec![], None),
        Layer::BatchNorm(b) => (vec![b.channels()], vec![&b.gamma, &b.beta, &b.mean, &b.var], Some(b.eps)),
        Layer::ReLU | Layer::Softmax | Layer::Flatten => (vec![], vec![], None),
    }
}

/// Serialize with every parameter narrowed to binary32.
pub fn write_model(net: &Network) -> Vec<u8> {
    let mut body = Vec::new();
    for layer in &net.layers {
        let (dims, parts, eps) = dims_and_payload(layer);
        body.push(kind_code(layer));
        body.push(dims.len() as u8);
        for d in dims {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in parts.into_iter().flatten().chain(eps.as_ref()) {
            body.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(HEADER + body.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            IoError::ModelLayout(format!("payload ends early at byte {}", self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| IoError::ModelLayout("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

fn expect_rank(kind: &str, dims: &[usize], rank: usize) -> Result<(), IoError> {
    if dims.len() != rank {
        return Err(IoError::ModelLayout(format!("{kind} needs rank {rank}, found {}", dims.len())));
    }
    Ok(())
}

fn product(dims: &[usize]) -> Result<usize, IoError> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| IoError::ModelLayout("dims overflow".into()))
}

/// Parse a container; rejects any malformed prefix.
pub fn read_model(bytes: &[u8]) -> Result<Network, IoError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(IoError::ModelMagic);
    }
    if bytes.len() < HEADER {
        return Err(IoError::ModelLayout("header truncated".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(IoError::ModelVersion(version));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let declared = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if declared != (bytes.len() - HEADER) as u64 {
        return Err(IoError::ModelLayout(format!(
            "declared body length {declared}, found {}",
            bytes.len() - HEADER
        )));
    }
    let mut r = Reader { bytes, pos: HEADER };
    let mut layers = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let kind = r.u8()?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let layer = match kind {
            0 => {
                expect_rank("dense", &dims, 2)?;
                let (out, inp) = (dims[0], dims[1]);
                Layer::Dense(Dense {
                    inputs: inp,
                    outputs: out,
                    weight: r.floats(product(&dims)?)?,
                    bias: r.floats(out)?,
                })
            }
            1 => {
                expect_rank("conv2d", &dims, 6)?;
                if dims[4] == 0 {
                    return Err(IoError::ModelLayout("conv stride 0".into()));
                }
                Layer::Conv2d(Conv2d {
                    out_channels: dims[0],
                    in_channels: dims[1],
                    kernel_h: dims[2],
                    kernel_w: dims[3],
                    stride: dims[4],
                    pad: dims[5],
                    weight: r.floats(product(&dims[..4])?)?,
                    bias: r.floats(dims[0])?,
                })
            }
            2 | 3 => {
                expect_rank("pool", &dims, 2)?;
                if dims[0] == 0 || dims[1] == 0 {
                    return Err(IoError::ModelLayout("pool size and stride must be positive".into()));
                }
                let p = Pool { size: dims[0], stride: dims[1] };
                if kind == 2 {
                    Layer::MaxPool(p)
                } else {
                    Layer::AvgPool(p)
                }
            }
            4 => {
                expect_rank("batchnorm", &dims, 1)?;
                let c = dims[0];
                Layer::BatchNorm(BatchNorm {
                    gamma: r.floats(c)?,
                    beta: r.floats(c)?,
                    mean: r.floats(c)?,
                    var: r.floats(c)?,
                    eps: r.floats(1)?[0],
                })
            }
            5..=7 => {
                expect_rank("activation", &dims, 0)?;
                [Layer::ReLU, Layer::Softmax, Layer::Flatten][kind as usize - 5].clone()
            }
            k => return Err(IoError::ModelLayout(format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(IoError::ModelLayout(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Network { layers })
}

pub fn save_model(net: &Network, path: &Path) -> Result<(), IoError> {
    fs::write(path, write_model(net)).map_err(file_err(path))
}

pub fn load_model(path: &Path) -> Result<Network, IoError> {
    read_model(&fs::read(path).map_err(file_err(path))?)
}

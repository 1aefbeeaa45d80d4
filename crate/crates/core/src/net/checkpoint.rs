//! Versioned little-endian binary checkpoint.
//!
//! ```text
//! magic "MODNETCK" | version u32 | arch u8 | seed u64 | epochs u32
//! input rank u32 | dims u32*
//! layer count u32 | per layer: kind u8, config u32*, weights f64*
//! adam flag u8 | [lr, beta1, beta2, eps f64, step u64, first/second moments f64*]
//! ```

use std::path::Path;

use super::{AdamState, Architecture, Conv2d, Layer, Linear, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MODNETCK";
const VERSION: u32 = 1;

const KIND_LINEAR: u8 = 1;
const KIND_CONV: u8 = 2;
const KIND_RELU: u8 = 3;
const KIND_POOL: u8 = 4;
const KIND_FLATTEN: u8 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
    pub epochs_completed: u32,
    pub adam: Option<AdamState>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn serialize(ckpt: &Checkpoint) -> Vec<u8> {
    let net = &ckpt.network;
    let mut out = Vec::with_capacity(64 + net.num_weights() * 8 * 3);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(net.architecture().tag());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    out.extend_from_slice(&ckpt.epochs_completed.to_le_bytes());
    put_u32(&mut out, net.input_shape().len());
    for &d in net.input_shape() {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, net.layers.len());
    for layer in &net.layers {
        match layer {
            Layer::Linear(l) => {
                out.push(KIND_LINEAR);
                put_u32(&mut out, l.out_features());
                put_u32(&mut out, l.in_features());
                put_f64s(&mut out, l.weight.data());
            }
            Layer::Conv2d(c) => {
                out.push(KIND_CONV);
                for &d in c.weight.shape() {
                    put_u32(&mut out, d);
                }
                put_u32(&mut out, c.stride);
                put_u32(&mut out, c.padding);
                put_f64s(&mut out, c.weight.data());
            }
            Layer::Relu => out.push(KIND_RELU),
            Layer::MaxPool2d { size } => {
                out.push(KIND_POOL);
                put_u32(&mut out, *size);
            }
            Layer::Flatten => out.push(KIND_FLATTEN),
        }
    }
    match &ckpt.adam {
        None => out.push(0),
        Some(a) => {
            out.push(1);
            put_f64s(&mut out, &[a.lr, a.beta1, a.beta2, a.eps]);
            out.extend_from_slice(&a.step.to_le_bytes());
            for (m, v) in a.first.iter().zip(&a.second) {
                put_f64s(&mut out, m.data());
                put_f64s(&mut out, v.data());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse(format!("checkpoint truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Parse(format!("{what}: size overflow")))?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn tensor(&mut self, shape: &[usize], what: &str) -> Result<Tensor> {
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| Error::Parse(format!("{what}: size overflow")))?;
        Tensor::from_vec(shape, self.f64s(n, what)?)
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Parse("not a checkpoint: bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let tag = r.u8("architecture")?;
    let arch = Architecture::from_tag(tag).ok_or_else(|| Error::Parse(format!("unknown architecture tag {tag}")))?;
    let seed = r.u64("seed")?;
    let epochs_completed = r.u32("epochs")? as u32;
    let rank = r.u32("input rank")?;
    let input_shape = (0..rank).map(|_| r.u32("input dim")).collect::<Result<Vec<_>>>()?;
    let count = r.u32("layer count")?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let kind = r.u8("layer kind")?;
        let layer = match kind {
            KIND_LINEAR => {
                let out = r.u32("linear out")?;
                let inp = r.u32("linear in")?;
                Layer::Linear(Linear::new(r.tensor(&[out, inp], "linear weight")?))
            }
            KIND_CONV => {
                let shape = (0..4).map(|_| r.u32("conv dim")).collect::<Result<Vec<_>>>()?;
                let stride = r.u32("conv stride")?;
                let padding = r.u32("conv padding")?;
                if stride == 0 {
                    return Err(Error::Parse(format!("layer {i}: zero conv stride")));
                }
                Layer::Conv2d(Conv2d::new(r.tensor(&shape, "conv weight")?, stride, padding))
            }
            KIND_RELU => Layer::Relu,
            KIND_POOL => Layer::MaxPool2d { size: r.u32("pool size")? },
            KIND_FLATTEN => Layer::Flatten,
            other => return Err(Error::Parse(format!("layer {i}: unknown kind {other}"))),
        };
        layers.push(layer);
    }
    let network = Network::new(arch, input_shape, layers)?;
    let adam = match r.u8("adam flag")? {
        0 => None,
        1 => {
            let h = r.f64s(4, "adam hyperparameters")?;
            let step = r.u64("adam step")?;
            let mut state = AdamState::new(&network, h[0]);
            state.beta1 = h[1];
            state.beta2 = h[2];
            state.eps = h[3];
            state.step = step;
            for (m, v) in state.first.iter_mut().zip(state.second.iter_mut()) {
                *m = r.tensor(m.shape(), "adam first moment")?;
                *v = r.tensor(v.shape(), "adam second moment")?;
            }
            Some(state)
        }
        other => return Err(Error::Parse(format!("bad adam flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Parse(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { network, seed, epochs_completed, adam })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, serialize(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize(&bytes).map_err(|e| match e {
        Error::Parse(msg) | Error::Shape(msg) => Error::format(path, msg),
        other => other,
    })
}

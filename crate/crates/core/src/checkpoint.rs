//! Binary checkpoint: config echo, step, RNG position and `f32` tensors.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic     8 bytes   "BCDIFFCK"
//! version   u32       1
//! config    u32 len + UTF-8 TOML
//! step      u64
//! rng       32-byte seed, u64 stream, u128 word position
//! tensors   u32 count, then per tensor:
//!           u8 name len + name, u32 ndim, u64 per dim, f32 data row-major
//! ```
//!
//! Parameters are stored as `f32`; [`crate::training::TrainState::quantize_f32`]
//! makes the in-memory state equal to what a reload produces.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::config::TrainConfig;
use crate::denoiser::{DenoiserNet, Layer, Sgd};
use crate::error::{Error, Result};
use crate::space::{EmbeddingTable, Representation};
use crate::training::TrainState;

pub const MAGIC: &[u8; 8] = b"BCDIFFCK";
pub const VERSION: u32 = 1;

struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn tensor2(name: &str, a: &Array2<f64>) -> Tensor {
    Tensor {
        name: name.to_string(),
        shape: vec![a.nrows(), a.ncols()],
        data: a.iter().map(|&v| v as f32).collect(),
    }
}

fn tensor1(name: &str, a: &Array1<f64>) -> Tensor {
    Tensor {
        name: name.to_string(),
        shape: vec![a.len()],
        data: a.iter().map(|&v| v as f32).collect(),
    }
}

pub fn to_bytes(state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = state.config.to_toml();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(state.step as u64).to_le_bytes());
    out.extend_from_slice(&state.rng.get_seed());
    out.extend_from_slice(&state.rng.get_stream().to_le_bytes());
    out.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());

    let mut tensors = vec![tensor2("table", state.table.weights())];
    for (i, l) in state.net.layers().iter().enumerate() {
        tensors.push(tensor2(&format!("net.{i}.w"), &l.w));
        tensors.push(tensor1(&format!("net.{i}.b"), &l.b));
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        out.push(t.name.len() as u8);
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.at))
        })?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<TrainState> {
    let mut c = Cursor { buf, at: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = c.u32()? as usize;
    let text = std::str::from_utf8(c.take(len)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let config = TrainConfig::from_toml_str(text)?;
    let step = c.u64()? as usize;
    let seed: [u8; 32] = c.array()?;
    let stream = c.u64()?;
    let word_pos = u128::from_le_bytes(c.array()?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = c.take(1)?[0] as usize;
        let name = String::from_utf8(c.take(nlen)?.to_vec()).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
        let ndim = c.u32()? as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        tensors.push((name, shape, data));
    }
    if c.at != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - c.at)));
    }
    let mut find = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        let pos = tensors
            .iter()
            .position(|(n, _, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        let (_, shape, data) = tensors.swap_remove(pos);
        Ok((shape, data))
    };
    let as2 = |(shape, data): (Vec<usize>, Vec<f64>)| -> Result<Array2<f64>> {
        match shape[..] {
            [r, k] => Ok(Array2::from_shape_vec((r, k), data).expect("sized by shape")),
            _ => Err(Error::Checkpoint(format!("expected a matrix, got shape {shape:?}"))),
        }
    };
    let as1 = |(shape, data): (Vec<usize>, Vec<f64>)| -> Result<Array1<f64>> {
        match shape[..] {
            [_] => Ok(Array1::from_vec(data)),
            _ => Err(Error::Checkpoint(format!("expected a vector, got shape {shape:?}"))),
        }
    };
    let trainable = config.space.trainable && config.space.repr == Representation::Embedding;
    let table = EmbeddingTable::new(as2(find("table")?)?, trainable)?;
    let mut layers = Vec::new();
    for i in 0..3 {
        layers.push(Layer {
            w: as2(find(&format!("net.{i}.w"))?)?,
            b: as1(find(&format!("net.{i}.b"))?)?,
        });
    }
    let net = DenoiserNet::from_layers(config.net_config(), layers)?;
    if table.dim() != net.config().dim {
        return Err(Error::Checkpoint("table and network dimensions differ".into()));
    }
    let schedule = config.schedule.build()?;
    let opt = Sgd::new(config.lr, config.momentum, config.clip);
    Ok(TrainState {
        config,
        schedule,
        table,
        net,
        opt,
        rng,
        step,
    })
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(state))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainState> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

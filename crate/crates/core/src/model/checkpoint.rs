//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "MLDR"                      magic
//! u32                         format version
//! u32 + bytes                 UTF-8 JSON {"model": ModelConfig, "optim": SgdConfig}
//! u64                         epochs completed
//! u32 + bytes                 RNG state
//! u32                         tensor count
//! per tensor:
//!   u32 + bytes               name ("velocity/<param>" for optimiser state)
//!   u32                       rank
//!   u64 × rank                extents
//!   f64 × product(extents)    row-major data
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::optim::{Sgd, SgdConfig};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MLDR";
pub const CHECKPOINT_VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    optim: SgdConfig,
}

pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub optimizer: Sgd<T>,
    pub epoch: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

pub fn encode<T: Scalar>(model: &Model<T>, optimizer: &Sgd<T>, epoch: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header = serde_json::to_string(&Header {
        model: model.config().clone(),
        optim: optimizer.config,
    })?;
    put_u32(&mut out, header.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(epoch as u64).to_le_bytes());
    let rng = model.rng().state_bytes();
    put_u32(&mut out, rng.len());
    out.extend_from_slice(&rng);
    let params = model.params();
    put_u32(&mut out, params.len() + optimizer.velocity().len());
    for p in params {
        put_tensor(&mut out, &p.name, &p.value);
    }
    for (name, v) in optimizer.velocity() {
        put_tensor(&mut out, &format!("{VELOCITY_PREFIX}{name}"), v);
    }
    Ok(out)
}

pub fn save<T: Scalar>(
    model: &Model<T>,
    optimizer: &Sgd<T>,
    epoch: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, encode(model, optimizer, epoch)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "needed {n} bytes for {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor<T: Scalar>(&mut self) -> Result<(String, Tensor<T>)> {
        let len = self.u32("tensor name length")?;
        let name = String::from_utf8(self.take(len, "tensor name")?.to_vec())
            .map_err(|_| Error::CorruptHeader("tensor name is not UTF-8".into()))?;
        let rank = self.u32("rank")?;
        if rank > 8 {
            return Err(Error::CorruptHeader(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).unwrap_or(usize::MAX), &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::CorruptHeader(format!("{name}: {e}")))?;
        Ok((name, t))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: "MLDR".into(),
            found: magic.to_vec(),
        });
    }
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let len = r.u32("config length")?;
    let header: Header = serde_json::from_slice(r.take(len, "config")?)
        .map_err(|e| Error::CorruptHeader(format!("config: {e}")))?;
    let epoch = r.u64("epoch")? as usize;
    let rng_len = r.u32("rng length")?;
    let rng = Rng::from_state_bytes(r.take(rng_len, "rng state")?)?;
    let count = r.u32("tensor count")?;

    let mut model = Model::<T>::build(header.model)?;
    model.set_rng(rng);
    let mut optimizer = Sgd::new(header.optim)?;
    let mut velocity = BTreeMap::new();
    let mut seen = 0;
    for _ in 0..count {
        let (name, t) = r.tensor::<T>()?;
        if let Some(pname) = name.strip_prefix(VELOCITY_PREFIX) {
            let expected = model
                .param(pname)
                .ok_or_else(|| Error::CorruptHeader(format!("velocity for unknown {pname}")))?
                .value
                .shape()
                .to_vec();
            if t.shape() != expected.as_slice() {
                return Err(Error::CheckpointShape {
                    name,
                    expected,
                    found: t.shape().to_vec(),
                });
            }
            velocity.insert(pname.to_string(), t);
            continue;
        }
        let p = model
            .param_mut(&name)
            .ok_or_else(|| Error::CorruptHeader(format!("unknown parameter {name}")))?;
        if p.value.shape() != t.shape() {
            return Err(Error::CheckpointShape {
                name,
                expected: p.value.shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        p.value = t;
        seen += 1;
    }
    if seen != model.params().len() {
        return Err(Error::CorruptHeader(format!(
            "{} of {} parameters present",
            seen,
            model.params().len()
        )));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptHeader(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    optimizer.set_velocity(velocity);
    Ok(Checkpoint {
        model,
        optimizer,
        epoch,
    })
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode(&fs::read(path)?)
}

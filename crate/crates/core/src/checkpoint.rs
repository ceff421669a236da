// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary checkpoint format.
//!
//! ```text
//! "CDDM" | version u32 | config | meta | tensor count u32 |
//!   per tensor: name len u32, name, dtype u8, rank u32, dims u64.., data (LE) |
//! crc32 u32 over everything before it
//! ```
//! All integers little-endian. Config is n_layers, n_heads, d_model,
//! vocab_size, max_positions (u32 each) and seed (u64); meta is
//! epochs_seen u32, samples_seen u64, dataset_fingerprint u32.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelConfig, TrainingMeta};
use crate::tensor::{DType, ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"CDDM";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))
    }
}

impl<F: Scalar> Checkpoint<F> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = self.config();
        let mut out = Vec::with_capacity(16 + self.params().numel() * F::DTYPE.size());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        for (v, what) in [
            (c.n_layers, "n_layers"),
            (c.n_heads, "n_heads"),
            (c.d_model, "d_model"),
            (c.vocab_size, "vocab_size"),
            (c.max_positions, "max_positions"),
        ] {
            put_u32(&mut out, to_u32(v, what)?);
        }
        put_u64(&mut out, c.seed);
        put_u32(&mut out, self.meta.epochs_seen);
        put_u64(&mut out, self.meta.samples_seen);
        put_u32(&mut out, self.meta.dataset_fingerprint);
        put_u32(&mut out, to_u32(self.params().len(), "tensor count")?);
        for (_, name, t) in self.params().iter() {
            put_u32(&mut out, to_u32(name.len(), "name length")?);
            out.extend_from_slice(name.as_bytes());
            out.push(F::DTYPE as u8);
            put_u32(&mut out, to_u32(t.rank(), "rank")?);
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        Ok(out)
    }

    /// Parses a checkpoint, converting stored tensors to `F` when the file
    /// uses the other precision.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = ModelConfig {
            n_layers: dims[0],
            n_heads: dims[1],
            d_model: dims[2],
            vocab_size: dims[3],
            max_positions: dims[4],
            seed: r.u64()?,
        };
        let meta = TrainingMeta {
            epochs_seen: r.u32()?,
            samples_seen: r.u64()?,
            dataset_fingerprint: r.u32()?,
        };
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype =
                DType::from_tag(r.u8()?).ok_or_else(|| Error::Checkpoint(format!("unknown dtype for {name}")))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            let raw = r.take(
                numel
                    .checked_mul(dtype.size())
                    .ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?,
            )?;
            let data: Vec<F> = match dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|b| F::lit(f64::from(f32::read_le(b))))
                    .collect(),
                DType::F64 => raw.chunks_exact(8).map(|b| F::lit(f64::read_le(b))).collect(),
            };
            params.push(name, Tensor::new(shape, data)?);
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        Checkpoint::from_parts(config, params, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and insists the stored architecture equals `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        ckpt.check_config(expected)?;
        Ok(ckpt)
    }

    /// Architecture equality; the init seed is ignored.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        let mut mine = *self.config();
        mine.seed = expected.seed;
        if &mine != expected {
            return Err(Error::dim(
                "checkpoint",
                format!("stored config {:?} differs from expected {expected:?}", self.config()),
            ));
        }
        Ok(())
    }
}

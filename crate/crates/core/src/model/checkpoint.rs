//! Binary checkpoint container, version 1. All integers and floats are
//! little-endian.
//!
//! ```text
//! magic        8 bytes   "GEOTRAJ\0"
//! version      u32       1
//! seed         u64
//! config_hash  16 bytes  ASCII hex, ModelConfig::hash()
//! config       u32 len + UTF-8 `key = value` text (ModelConfig)
//! meta         u32 len + UTF-8 `key = value` text (free-form run info)
//! count        u32
//! count x { name: u32 len + UTF-8, ndim: u32, dims: ndim x u64, values: f64 x prod(dims) }
//! ```
//!
//! Tensors are written in name order, so identical parameters produce
//! identical bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"GEOTRAJ\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub meta: String,
    pub params: ParamStore,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    w.write_all(&ckpt.seed.to_le_bytes())?;
    w.write_all(ckpt.config.hash().as_bytes())?;
    put_str(w, &ckpt.config.to_text())?;
    put_str(w, &ckpt.meta)?;
    put_u32(w, ckpt.params.len() as u32)?;
    for (name, p) in ckpt.params.iter() {
        put_str(w, name)?;
        put_u32(w, p.value.shape().len() as u32)?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
        String::from_utf8(buf).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<Checkpoint> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>("magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let seed = r.u64("seed")?;
    let hash = r.bytes::<16>("config hash")?;
    let config = ModelConfig::from_text(&r.string("config")?)?;
    if config.hash().as_bytes() != hash {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    let meta = r.string("meta")?;
    let count = r.u32("tensor count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(r.bytes("values")?));
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        params.insert(name, t);
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(Checkpoint { config, seed, meta, params })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

//! GZCK parameter checkpoints: a versioned container of named tensors.
//!
//! Layout: `"GZCK"`, u32 version, u32 tensor count, then per tensor
//! u16 name length, name bytes, u8 dtype (0 = f32, 1 = f64), u32 rank,
//! `rank` u32 dims and the raw values.

use std::path::Path;

use gazediff_core::params::ParamStore;
use gazediff_core::{Scalar, Tensor};

use super::{read, write_atomic, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GZCK";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;

/// A tensor as stored, widened to f64 with its on-disk dtype kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: u8,
    pub tensor: Tensor<f64>,
}

pub fn encode<T: Scalar>(params: &ParamStore<T>) -> std::result::Result<Vec<u8>, String> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.dim(params.len())?;
    for (name, t) in params.iter() {
        w.string(name)?;
        w.u8(T::DTYPE);
        w.dim(t.rank())?;
        for &d in t.shape() {
            w.dim(d)?;
        }
        for &v in t.data() {
            match T::DTYPE {
                DTYPE_F32 => w.f32(v.as_f64() as f32),
                _ => w.f64(v.as_f64()),
            }
        }
    }
    Ok(w.0)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Entry>> {
    let fmt = |msg| Error::format(path, msg);
    let mut r = Reader::new(bytes);
    r.magic(MAGIC).map_err(fmt)?;
    r.version(VERSION).map_err(fmt)?;
    let count = r.u32().map_err(fmt)? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string().map_err(fmt)?;
        let dtype = r.u8().map_err(fmt)?;
        let rank = r.u32().map_err(fmt)? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32().map_err(fmt)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| fmt(format!("{name}: size overflows")))?;
        let data = match dtype {
            DTYPE_F32 => r.f32s(n).map_err(fmt)?.into_iter().map(f64::from).collect(),
            DTYPE_F64 => r.f64s(n).map_err(fmt)?,
            other => return Err(fmt(format!("{name}: unsupported dtype {other}"))),
        };
        let tensor = Tensor::new(&shape, data).map_err(|e| Error::data(path, e))?;
        entries.push(Entry { name, dtype, tensor });
    }
    r.finish().map_err(fmt)?;
    Ok(entries)
}

pub fn save<T: Scalar>(path: &Path, params: &ParamStore<T>) -> Result<()> {
    let bytes = encode(params).map_err(|m| Error::format(path, m))?;
    write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    decode(&read(path)?, path)
}

/// Overwrites every tensor in `params` from the checkpoint; names and
/// shapes must match exactly.
pub fn load_into<T: Scalar>(path: &Path, params: &mut ParamStore<T>) -> Result<()> {
    let entries = load(path)?;
    params
        .load_named(entries.iter().map(|e| (e.name.as_str(), e.tensor.cast::<T>())))
        .map_err(|e| Error::data(path, e))
}

//! GZTR trajectory stores.
//!
//! Layout: `"GZTR"`, u32 version, u32 record count, then per record
//! u16 id length, id bytes, f64 sampling rate, u32 length `L`, and
//! `L×2` f32 coordinates in model space.

use std::path::Path;

use gazediff_core::gaze::Trajectory;

use super::{read, write_atomic, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GZTR";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "gztr";

pub fn encode(records: &[Trajectory]) -> std::result::Result<Vec<u8>, String> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.dim(records.len())?;
    for t in records {
        w.string(&t.stimulus_id)?;
        w.f64(t.rate_hz);
        w.dim(t.len())?;
        for [x, y] in &t.coords {
            w.f32(*x);
            w.f32(*y);
        }
    }
    Ok(w.0)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Trajectory>> {
    let fmt = |msg| Error::format(path, msg);
    let mut r = Reader::new(bytes);
    r.magic(MAGIC).map_err(fmt)?;
    r.version(VERSION).map_err(fmt)?;
    let count = r.u32().map_err(fmt)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let stimulus_id = r.string().map_err(fmt)?;
        let rate_hz = r.f64().map_err(fmt)?;
        let len = r.u32().map_err(fmt)? as usize;
        let flat = r.f32s(len * 2).map_err(fmt)?;
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(fmt(format!("record {i}: sampling rate {rate_hz}")));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(
                path,
                gazediff_core::Error::NonFinite {
                    location: format!("trajectory record {i}"),
                },
            ));
        }
        out.push(Trajectory {
            stimulus_id,
            coords: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            rate_hz,
        });
    }
    r.finish().map_err(fmt)?;
    Ok(out)
}

pub fn save(path: &Path, records: &[Trajectory]) -> Result<()> {
    let bytes = encode(records).map_err(|m| Error::format(path, m))?;
    write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<Vec<Trajectory>> {
    decode(&read(path)?, path)
}

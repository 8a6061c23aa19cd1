//! GZFG feature grid files.
//!
//! Layout: `"GZFG"`, u32 version, u32 height, u32 width, u32 depth,
//! u8 dtype (0 = f32), u16 id length, id bytes, then `height·width·depth`
//! f32 values, row-major with depth fastest.

use std::path::Path;

use gazediff_core::features::FeatureGrid;

use super::{read, write_atomic, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GZFG";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const EXTENSION: &str = "gzfg";

pub fn encode(grid: &FeatureGrid) -> std::result::Result<Vec<u8>, String> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.dim(grid.height)?;
    w.dim(grid.width)?;
    w.dim(grid.depth)?;
    w.u8(DTYPE_F32);
    w.string(&grid.stimulus_id)?;
    for v in &grid.values {
        w.f32(*v);
    }
    Ok(w.0)
}

/// Parses a grid without altering any value.
pub fn decode(bytes: &[u8], path: &Path) -> Result<FeatureGrid> {
    let fmt = |msg| Error::format(path, msg);
    let mut r = Reader::new(bytes);
    r.magic(MAGIC).map_err(fmt)?;
    r.version(VERSION).map_err(fmt)?;
    let h = r.u32().map_err(fmt)? as usize;
    let w = r.u32().map_err(fmt)? as usize;
    let d = r.u32().map_err(fmt)? as usize;
    match r.u8().map_err(fmt)? {
        DTYPE_F32 => {}
        other => return Err(fmt(format!("unsupported dtype {other}"))),
    }
    let id = r.string().map_err(fmt)?;
    let n = h
        .checked_mul(w)
        .and_then(|c| c.checked_mul(d))
        .ok_or_else(|| fmt("grid size overflows".into()))?;
    let values = r.f32s(n).map_err(fmt)?;
    r.finish().map_err(fmt)?;
    FeatureGrid::new(id, h, w, d, values).map_err(|e| Error::data(path, e))
}

pub fn save(path: &Path, grid: &FeatureGrid) -> Result<()> {
    let bytes = encode(grid).map_err(|m| Error::format(path, m))?;
    write_atomic(path, &bytes)
}

/// Loads a grid exactly as stored.
pub fn load(path: &Path) -> Result<FeatureGrid> {
    decode(&read(path)?, path)
}

/// Loads a grid and standardizes it to zero mean and unit variance.
pub fn load_standardized(path: &Path) -> Result<FeatureGrid> {
    Ok(load(path)?.standardized())
}

//! Saliency maps as greyscale PFM (float) and PGM (8-bit, for viewing).
//!
//! PFM follows the usual convention: `Pf`, `width height`, a scale whose
//! sign gives endianness (negative = little-endian), then f32 rows from
//! the bottom of the image to the top.

use std::path::Path;

use gazediff_core::events::SaliencyMap;

use super::{read, write_atomic};
use crate::error::{Error, Result};

pub fn encode_pfm(map: &SaliencyMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    for r in (0..map.height).rev() {
        for v in &map.values[r * map.width..(r + 1) * map.width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

/// Splits off `count` whitespace-separated header tokens, consuming the
/// single whitespace byte after the last one.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, &[u8])> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    (i < bytes.len()).then(|| (tokens, &bytes[i + 1..]))
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<SaliencyMap> {
    let bad = |m: &str| Error::format(path, m.to_string());
    let (tokens, data) = header_tokens(bytes, 4).ok_or_else(|| bad("truncated PFM header"))?;
    if tokens[0] != "Pf" {
        return Err(bad("not a greyscale PFM (expected Pf)"));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("bad scale"));
    }
    let n = width.checked_mul(height).ok_or_else(|| bad("size overflows"))?;
    if data.len() != n * 4 {
        return Err(bad(&format!("expected {} data bytes, found {}", n * 4, data.len())));
    }
    let word = |c: &[u8]| {
        let b: [u8; 4] = c.try_into().unwrap();
        if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let mut values = vec![0.0; n];
    for (k, c) in data.chunks_exact(4).enumerate() {
        let (r, col) = (height - 1 - k / width, k % width);
        values[r * width + col] = word(c) as f64;
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value"));
    }
    SaliencyMap::new(height, width, values).map_err(|e| Error::data(path, e))
}

/// 8-bit greyscale scaled so the maximum maps to 255.
pub fn encode_pgm(map: &SaliencyMap) -> Vec<u8> {
    let max = map.values.iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.values.iter().map(|&v| {
        if max > 0.0 {
            (v / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn save_pfm(path: &Path, map: &SaliencyMap) -> Result<()> {
    write_atomic(path, &encode_pfm(map))
}

pub fn save_pgm(path: &Path, map: &SaliencyMap) -> Result<()> {
    write_atomic(path, &encode_pgm(map))
}

pub fn load_pfm(path: &Path) -> Result<SaliencyMap> {
    decode_pfm(&read(path)?, path)
}

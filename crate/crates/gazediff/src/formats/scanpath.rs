//! Scanpath text files: one fixation per line,
//! `stimulus_id, idx, x, y, onset_s, duration_s`, with `idx` counting from
//! zero within each scanpath. Lines starting with `#` are comments.
//! A scanpath without fixations writes no lines.

use std::fmt::Write as _;
use std::path::Path;

use gazediff_core::events::{Fixation, Scanpath};

use super::{read, write_atomic};
use crate::error::{Error, Result};

pub const HEADER: &str = "# stimulus_id, idx, x, y, onset_s, duration_s";
pub const EXTENSION: &str = "txt";

pub fn encode(scanpaths: &[Scanpath]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for sp in scanpaths {
        for (i, f) in sp.fixations.iter().enumerate() {
            writeln!(
                out,
                "{}, {i}, {}, {}, {}, {}",
                sp.stimulus_id, f.x, f.y, f.onset, f.duration
            )
            .unwrap();
        }
    }
    out
}

pub fn decode(text: &str, path: &Path) -> Result<Vec<Scanpath>> {
    let mut out: Vec<Scanpath> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::format(path, format!("line {}: {msg}", n + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(bad(&format!("expected 6 fields, found {}", fields.len())));
        }
        let idx: usize = fields[1].parse().map_err(|_| bad("bad idx"))?;
        let num = |i: usize| -> Result<f64> {
            let v: f64 = fields[i].parse().map_err(|_| bad("bad number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad("non-finite number"))
            }
        };
        let fixation = Fixation {
            x: num(2)?,
            y: num(3)?,
            onset: num(4)?,
            duration: num(5)?,
        };
        let id = fields[0];
        match out.last_mut() {
            Some(sp) if idx > 0 && sp.stimulus_id == id && sp.fixations.len() == idx => sp.fixations.push(fixation),
            _ if idx == 0 => out.push(Scanpath {
                stimulus_id: id.to_string(),
                fixations: vec![fixation],
            }),
            _ => return Err(bad(&format!("idx {idx} out of sequence"))),
        }
    }
    Ok(out)
}

pub fn save(path: &Path, scanpaths: &[Scanpath]) -> Result<()> {
    write_atomic(path, encode(scanpaths).as_bytes())
}

pub fn load(path: &Path) -> Result<Vec<Scanpath>> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not UTF-8"))?;
    decode(&text, path)
}

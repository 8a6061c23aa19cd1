//! Dataset manifest: CSV with columns
//! `stimulus_id,image,width,height,rate_hz,recordings,features`.
//!
//! `recordings` is a `;`-separated list. Relative paths resolve against the
//! manifest's directory. `image` and `features` may be empty.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    stimulus_id: String,
    image: String,
    width: usize,
    height: usize,
    rate_hz: f64,
    recordings: String,
    features: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub stimulus_id: String,
    pub image: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub rate_hz: f64,
    pub recordings: Vec<PathBuf>,
    pub features: Option<PathBuf>,
}

impl Entry {
    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn get(&self, stimulus_id: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.stimulus_id == stimulus_id)
    }

    pub fn stimulus_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.stimulus_id.clone()).collect()
    }
}

fn resolve(root: &Path, s: &str) -> Option<PathBuf> {
    let s = s.trim();
    (!s.is_empty()).then(|| root.join(s))
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned()
}

pub fn load(path: &Path) -> Result<Manifest> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        if !seen.insert(row.stimulus_id.clone()) {
            return Err(Error::format(
                path,
                format!("duplicate stimulus_id {}", row.stimulus_id),
            ));
        }
        if row.width == 0 || row.height == 0 || !(row.rate_hz > 0.0) {
            return Err(Error::format(
                path,
                format!("{}: invalid size or rate", row.stimulus_id),
            ));
        }
        entries.push(Entry {
            image: resolve(&root, &row.image),
            width: row.width,
            height: row.height,
            rate_hz: row.rate_hz,
            recordings: row.recordings.split(';').filter_map(|r| resolve(&root, r)).collect(),
            features: resolve(&root, &row.features),
            stimulus_id: row.stimulus_id,
        });
    }
    Ok(Manifest { root, entries })
}

/// Writes paths relative to the manifest's directory where possible.
pub fn save(path: &Path, manifest: &Manifest) -> Result<()> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &manifest.entries {
        let opt = |p: &Option<PathBuf>| p.as_deref().map(|p| relative(&root, p)).unwrap_or_default();
        w.serialize(Row {
            stimulus_id: e.stimulus_id.clone(),
            image: opt(&e.image),
            width: e.width,
            height: e.height,
            rate_hz: e.rate_hz,
            recordings: e
                .recordings
                .iter()
                .map(|r| relative(&root, r))
                .collect::<Vec<_>>()
                .join(";"),
            features: opt(&e.features),
        })
        .map_err(|e| Error::csv(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

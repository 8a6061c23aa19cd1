//! Train/test split files: CSV `stimulus_id,split` with split `train` or `test`.

use std::collections::BTreeSet;
use std::path::Path;

use gazediff_core::gaze::DatasetSplit;

use super::write_atomic;
use crate::error::{Error, Result};

pub fn save(path: &Path, split: &DatasetSplit) -> Result<()> {
    let mut text = format!("# seed {}\nstimulus_id,split\n", split.seed);
    for id in &split.train {
        text.push_str(&format!("{id},train\n"));
    }
    for id in &split.test {
        text.push_str(&format!("{id},test\n"));
    }
    write_atomic(path, text.as_bytes())
}

pub fn load(path: &Path) -> Result<DatasetSplit> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let (mut train, mut test) = (BTreeSet::new(), BTreeSet::new());
    for row in reader.deserialize::<(String, String)>() {
        let (id, which) = row.map_err(|e| Error::csv(path, e))?;
        let fresh = match which.as_str() {
            "train" => !test.contains(&id) && train.insert(id.clone()),
            "test" => !train.contains(&id) && test.insert(id.clone()),
            other => return Err(Error::format(path, format!("{id}: unknown split {other:?}"))),
        };
        if !fresh {
            return Err(Error::format(path, format!("{id} listed twice")));
        }
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let seed = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# seed "))
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0);
    Ok(DatasetSplit { train, test, seed })
}

//! Raw recordings: one CSV file per recording with header `t,x,y,valid`.

use std::path::Path;

use gazediff_core::gaze::{GazeSample, RawRecording};
use serde::{Deserialize, Deserializer};

use super::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct Row {
    t: f64,
    x: f64,
    y: f64,
    #[serde(deserialize_with = "flag")]
    valid: bool,
}

fn flag<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(serde::de::Error::custom(format!("valid flag {other:?}"))),
    }
}

/// Reads samples; `x`/`y` may be `nan` for lost tracking.
pub fn load(path: &Path, subject_id: &str, stimulus_id: &str, rate_hz: f64) -> Result<RawRecording> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?;
    if headers.iter().collect::<Vec<_>>() != ["t", "x", "y", "valid"] {
        return Err(Error::format(
            path,
            format!("expected header t,x,y,valid, found {headers:?}"),
        ));
    }
    let mut samples = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        samples.push(GazeSample {
            t: row.t,
            x: row.x,
            y: row.y,
            valid: row.valid,
        });
    }
    let rec = RawRecording {
        subject_id: subject_id.to_string(),
        stimulus_id: stimulus_id.to_string(),
        samples,
        rate_hz,
    };
    rec.validate().map_err(|e| Error::data(path, e))?;
    Ok(rec)
}

pub fn save(path: &Path, rec: &RawRecording) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e| Error::csv(path, e);
    w.write_record(["t", "x", "y", "valid"]).map_err(csv_err)?;
    for s in &rec.samples {
        let valid = if s.valid { "1" } else { "0" };
        w.write_record([s.t.to_string(), s.x.to_string(), s.y.to_string(), valid.to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

//! Metric reports: a CSV with one `(dataset, image, metric, mean, best)`
//! row per image and metric, and a JSON summary with overall means.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub dataset: String,
    pub image: String,
    pub metric: String,
    pub mean: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overall {
    pub metric: String,
    pub mean: f64,
    pub best: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub images: usize,
    pub ground_truth: usize,
    pub generated: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub rows: Vec<Row>,
    pub overall: Vec<Overall>,
    pub counts: Counts,
    /// Notes attached to the report, e.g. parameter-sensitive quantities.
    pub notes: Vec<String>,
}

impl MetricReport {
    /// Recomputes `overall` as the per-metric average over images.
    pub fn summarize(&mut self) {
        let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry(&r.metric).or_default();
            e.0 += r.mean;
            e.1 += r.best;
            e.2 += 1;
        }
        self.overall = acc
            .into_iter()
            .map(|(m, (mean, best, n))| Overall {
                metric: m.to_string(),
                mean: mean / n as f64,
                best: best / n as f64,
                images: n,
            })
            .collect();
    }

    pub fn overall(&self, metric: &str) -> Option<&Overall> {
        self.overall.iter().find(|o| o.metric == metric)
    }

    pub fn to_csv(&self) -> std::result::Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dataset", "image", "metric", "mean", "best"])?;
        for r in &self.rows {
            w.write_record([
                &r.dataset,
                &r.image,
                &r.metric,
                &r.mean.to_string(),
                &r.best.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let csv = self.to_csv().map_err(|e| Error::csv(csv_path, e))?;
        write_atomic(csv_path, &csv)?;
        write_atomic(json_path, &serde_json::to_vec_pretty(self)?)
    }
}

pub fn load_csv(path: &Path) -> Result<Vec<Row>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<Row>, _>>()
        .map_err(|e| Error::csv(path, e))
}

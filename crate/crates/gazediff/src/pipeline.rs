//! The pipeline stages behind each CLI command. Every stage collects
//! per-item failures instead of stopping at the first one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use gazediff_core::denoiser::{Condition, Denoiser};
use gazediff_core::diffusion::{sample_ddim, TrainItem, Trainer};
use gazediff_core::events::{
    build_saliency, extract_fixations, fixation_pixel, scanpath_stats, stats_histograms, Histogram, SaliencyMap,
    Scanpath,
};
use gazediff_core::features::FeatureGrid;
use gazediff_core::gaze::{preprocess as preprocess_one, split, Trajectory};
use gazediff_core::metrics::{aggregate, saliency_metrics, Metric, MetricParams, Point};
use gazediff_core::params::ParamStore;
use gazediff_core::synth::two_blob_dataset;
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{self, checkpoint, features, manifest, recording, report, saliency, scanpath, trajectories};

pub const MANIFEST: &str = "manifest.csv";
pub const TRAJECTORIES: &str = "trajectories.gztr";
pub const SPLIT: &str = "split.csv";
pub const CHECKPOINT: &str = "checkpoint.gzck";
pub const MODEL_CONFIG: &str = "model.conf";
pub const LOSS_LOG: &str = "loss.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub item: String,
    pub error: String,
}

/// What a stage did: counts, the files it wrote and the items that failed.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Outcome {
    pub command: String,
    pub processed: usize,
    /// Items left out by design, e.g. recordings too short to keep.
    pub skipped: usize,
    pub failures: Vec<Failure>,
    pub outputs: Vec<PathBuf>,
    pub details: BTreeMap<String, serde_json::Value>,
}

impl Outcome {
    fn new(command: &str) -> Self {
        Outcome {
            command: command.to_string(),
            ..Outcome::default()
        }
    }

    fn fail(&mut self, item: impl Into<String>, error: impl ToString) {
        let item = item.into();
        let error = error.to_string();
        warn!("{item}: {error}");
        self.failures.push(Failure { item, error });
    }

    fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable detail"),
        );
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Maps `f` over `items` on up to `workers` threads; results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

/// Files under `inputs` (recursing into directories) with the given extension, sorted.
pub fn collect_files(inputs: &[PathBuf], extension: &str) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, ext: &str, out: &mut Vec<PathBuf>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, ext, out)?;
            } else if path.extension().is_some_and(|e| e == ext) {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found = Vec::new();
            walk(input, extension, &mut found)?;
            found.sort();
            out.extend(found);
        } else if input.exists() {
            out.push(input.clone());
        } else {
            return Err(Error::io(input, std::io::ErrorKind::NotFound.into()));
        }
    }
    Ok(out)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Synthetic two-blob dataset: feature grids, recordings and a manifest.
pub fn synth_data(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut outcome = Outcome::new("synth-data");
    let data = two_blob_dataset(&cfg.synth())?;
    let mut entries = Vec::new();
    let mut centers = BTreeMap::new();
    for s in &data.stimuli {
        let grid_path = out.join("features").join(format!("{}.{}", s.id, features::EXTENSION));
        features::save(&grid_path, &s.grid)?;
        let mut recs = Vec::new();
        for rec in data.recordings.iter().filter(|r| r.stimulus_id == s.id) {
            let p = out.join("recordings").join(format!("{}_{}.csv", s.id, rec.subject_id));
            recording::save(&p, rec)?;
            recs.push(p);
        }
        outcome.processed += 1;
        centers.insert(s.id.clone(), (s.anchor, s.center));
        entries.push(manifest::Entry {
            stimulus_id: s.id.clone(),
            image: None,
            width: cfg.frame,
            height: cfg.frame,
            rate_hz: cfg.synth_rate_hz,
            recordings: recs,
            features: Some(grid_path),
        });
    }
    let manifest_path = out.join(MANIFEST);
    manifest::save(
        &manifest_path,
        &manifest::Manifest {
            root: out.to_path_buf(),
            entries,
        },
    )?;
    let centers_path = out.join("blobs.json");
    formats::write_atomic(&centers_path, &serde_json::to_vec_pretty(&centers)?)?;
    outcome.outputs = vec![manifest_path, centers_path];
    outcome.detail("recordings", data.recordings.len());
    Ok(outcome)
}

/// Cleans every recording of a manifest into one trajectory store and
/// writes the stimulus-level split.
pub fn preprocess(cfg: &RunConfig, manifest_path: &Path, out: &Path) -> Result<Outcome> {
    let mut outcome = Outcome::new("preprocess");
    let m = manifest::load(manifest_path)?;
    let pre = cfg.preprocess();
    let per_stimulus = par_map(&m.entries, cfg.workers, |e| {
        e.recordings
            .iter()
            .map(|path| {
                let subject = file_stem(path);
                let rec = recording::load(path, &subject, &e.stimulus_id, e.rate_hz)?;
                match preprocess_one(&rec, e.size(), &pre) {
                    Ok(t) => Ok(Some(t)),
                    Err(gazediff_core::Error::TooShort { .. } | gazediff_core::Error::EmptyRecording) => Ok(None),
                    Err(err) => Err(Error::data(path, err)),
                }
            })
            .collect::<Vec<Result<Option<Trajectory>>>>()
    });
    let mut store = Vec::new();
    for (e, results) in m.entries.iter().zip(per_stimulus) {
        for (path, r) in e.recordings.iter().zip(results) {
            match r {
                Ok(Some(t)) => {
                    store.push(t);
                    outcome.processed += 1;
                }
                Ok(None) => {
                    info!("{}: rejected as too short", path.display());
                    outcome.skipped += 1;
                }
                Err(err) => outcome.fail(path.display().to_string(), err),
            }
        }
    }
    let split = split(&m.stimulus_ids(), cfg.seed, cfg.test_fraction)?;
    let store_path = out.join(TRAJECTORIES);
    let split_path = out.join(SPLIT);
    trajectories::save(&store_path, &store)?;
    formats::split::save(&split_path, &split)?;
    outcome.detail("train_stimuli", split.train.len());
    outcome.detail("test_stimuli", split.test.len());
    outcome.outputs = vec![store_path, split_path];
    Ok(outcome)
}

/// Loads a stimulus grid as the model consumes it: standardized and
/// resampled to the configured grid size.
pub fn model_grid(cfg: &RunConfig, entry: &manifest::Entry) -> Result<FeatureGrid> {
    let path = entry
        .features
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{}: manifest lists no feature grid", entry.stimulus_id)))?;
    let mut grid = features::load_standardized(path)?;
    if grid.depth != cfg.feat_dim {
        return Err(Error::format(
            path,
            format!("grid depth {} but feat_dim is {}", grid.depth, cfg.feat_dim),
        ));
    }
    if (grid.height, grid.width) != (cfg.grid_height, cfg.grid_width) {
        grid = grid
            .resample((cfg.grid_height, cfg.grid_width))
            .map_err(|e| Error::data(path, e))?;
    }
    Ok(grid)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    v.sort_by(f64::total_cmp);
    (!v.is_empty()).then(|| v[v.len() / 2])
}

/// Trains on the train split and writes the checkpoint, the model config
/// and the loss log.
pub fn train(cfg: &RunConfig, manifest_path: &Path, data_dir: &Path, out: &Path) -> Result<Outcome> {
    let mut outcome = Outcome::new("train");
    let m = manifest::load(manifest_path)?;
    let store = trajectories::load(&data_dir.join(TRAJECTORIES))?;
    let split = formats::split::load(&data_dir.join(SPLIT))?;
    let mut grids: BTreeMap<String, FeatureGrid> = BTreeMap::new();
    for id in &split.train {
        match m
            .get(id)
            .ok_or_else(|| Error::Config(format!("{id} is not in the manifest")))
        {
            Ok(entry) => match model_grid(cfg, entry) {
                Ok(g) => {
                    grids.insert(id.clone(), g);
                }
                Err(err) => outcome.fail(id.clone(), err),
            },
            Err(err) => outcome.fail(id.clone(), err),
        }
    }
    let train_set: Vec<&Trajectory> = store.iter().filter(|t| grids.contains_key(&t.stimulus_id)).collect();
    if train_set.is_empty() {
        return Err(Error::Config("no training trajectories with feature grids".into()));
    }
    if let Some(t) = train_set.iter().find(|t| t.len() != cfg.seq_len) {
        return Err(Error::Config(format!(
            "stored trajectories have length {} but seq_len is {}",
            t.len(),
            cfg.seq_len
        )));
    }
    let items: Vec<TrainItem<'_>> = train_set
        .iter()
        .map(|t| TrainItem {
            coords: &t.coords,
            grid: &grids[&t.stimulus_id],
        })
        .collect();
    let steps = if cfg.train_steps > 0 {
        cfg.train_steps
    } else {
        cfg.epochs * items.len().div_ceil(cfg.batch)
    };
    let (model, params) = Denoiser::new::<f32>(cfg.denoiser(), cfg.seed)?;
    info!(
        "training {} parameters on {} trajectories for {steps} steps",
        params.numel(),
        items.len()
    );
    let mut trainer = Trainer::new(&model, params, cfg.schedule()?, cfg.train(), cfg.seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut log = String::from("step,loss\n");
    let mut window = 0.0;
    let segment = if cfg.checkpoint_every > 0 {
        cfg.checkpoint_every
    } else {
        steps
    };
    let mut done = 0;
    while done < steps {
        let n = segment.min(steps - done);
        trainer.fit(&items, n, |step, loss| {
            log.push_str(&format!("{step},{loss}\n"));
            window += loss;
            if step % 100 == 0 {
                info!("step {step}: mean loss {:.5}", window / 100.0);
                window = 0.0;
            }
        })?;
        done += n;
        if done < steps {
            let p = out.join(format!("checkpoint_{done:07}.gzck"));
            checkpoint::save(&p, trainer.params())?;
            outcome.outputs.push(p);
        }
    }
    let params = trainer.into_params();
    let mut model_cfg = cfg.clone();
    model_cfg.sample_rate_hz = median(train_set.iter().map(|t| t.rate_hz).collect()).unwrap_or(cfg.sample_rate_hz);
    let ckpt = out.join(CHECKPOINT);
    checkpoint::save(&ckpt, &params)?;
    let conf = out.join(MODEL_CONFIG);
    formats::write_atomic(&conf, model_cfg.to_text().as_bytes())?;
    let loss = out.join(LOSS_LOG);
    formats::write_atomic(&loss, log.as_bytes())?;
    outcome.processed = items.len();
    outcome.detail("steps", steps);
    outcome.outputs.extend([ckpt, conf, loss]);
    Ok(outcome)
}

/// Reads the config a model was trained with.
pub fn load_model_config(model_dir: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.apply_file(&model_dir.join(MODEL_CONFIG))?;
    Ok(cfg)
}

/// Builds the denoiser described by `cfg` and loads its weights.
pub fn load_model(cfg: &RunConfig, model_dir: &Path) -> Result<(Denoiser, ParamStore<f32>)> {
    let (model, mut params) = Denoiser::new::<f32>(cfg.denoiser(), 0)?;
    checkpoint::load_into(&model_dir.join(CHECKPOINT), &mut params)?;
    Ok((model, params))
}

/// Seed of the `k`-th trajectory for a stimulus; independent of worker scheduling.
pub fn sample_seed(seed: u64, stimulus_id: &str, k: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stimulus_id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (k as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates `count` trajectories for one grid, one per seed.
pub fn generate(
    cfg: &RunConfig,
    model: &Denoiser,
    params: &ParamStore<f32>,
    grid: &FeatureGrid,
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    let grids: Vec<Option<&FeatureGrid>> = seeds.iter().map(|_| Some(grid)).collect();
    let cond: Condition<f32> = model.condition(&grids)?;
    let out = sample_ddim(
        model,
        params,
        &cfg.schedule()?,
        &cond,
        seeds,
        cfg.ddim_steps,
        cfg.guidance(),
    )?;
    Ok(out
        .data()
        .chunks(cfg.seq_len * 2)
        .map(|c| Trajectory {
            stimulus_id: grid.stimulus_id.clone(),
            coords: c.chunks(2).map(|p| [p[0], p[1]]).collect(),
            rate_hz: cfg.sample_rate_hz,
        })
        .collect())
}

/// Writes `samples_per_stimulus` trajectories per test stimulus, one file each.
pub fn sample(
    cfg: &RunConfig,
    model_dir: &Path,
    manifest_path: &Path,
    split_path: &Path,
    out: &Path,
) -> Result<Outcome> {
    let mut outcome = Outcome::new("sample");
    let (model, params) = load_model(cfg, model_dir)?;
    let m = manifest::load(manifest_path)?;
    let split = formats::split::load(split_path)?;
    let ids: Vec<&String> = split.test.iter().collect();
    let n = cfg.samples_per_stimulus;
    let results = par_map(&ids, cfg.workers, |id| -> Result<Vec<PathBuf>> {
        let entry = m
            .get(id)
            .ok_or_else(|| Error::Config(format!("{id} is not in the manifest")))?;
        let grid = model_grid(cfg, entry)?;
        let seeds: Vec<u64> = (0..n).map(|k| sample_seed(cfg.seed, id, k)).collect();
        let trajs = generate(cfg, &model, &params, &grid, &seeds)?;
        let mut written = Vec::with_capacity(n);
        for (k, t) in trajs.iter().enumerate() {
            let p = out.join(format!("{id}_{k:03}.{}", trajectories::EXTENSION));
            trajectories::save(&p, std::slice::from_ref(t))?;
            written.push(p);
        }
        info!("{id}: {n} trajectories");
        Ok(written)
    });
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(files) => {
                outcome.processed += files.len();
                outcome.outputs.extend(files);
            }
            Err(err) => outcome.fail(id.as_str(), err),
        }
    }
    outcome.detail("stimuli", ids.len());
    Ok(outcome)
}

/// Fixations of a model-space trajectory, measured in frame pixels.
pub fn scanpath_of(cfg: &RunConfig, traj: &Trajectory) -> gazediff_core::Result<Scanpath> {
    let points = traj.denormalize(cfg.frame_size());
    Ok(Scanpath {
        stimulus_id: traj.stimulus_id.clone(),
        fixations: extract_fixations(&points, traj.rate_hz, &cfg.fixation())?,
    })
}

/// One scanpath file per trajectory store.
pub fn extract(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<Outcome> {
    let mut outcome = Outcome::new("extract");
    let files = collect_files(inputs, trajectories::EXTENSION)?;
    let results = par_map(&files, cfg.workers, |path| -> Result<(PathBuf, usize)> {
        let trajs = trajectories::load(path)?;
        let paths = trajs
            .iter()
            .map(|t| scanpath_of(cfg, t).map_err(|e| Error::data(path, e)))
            .collect::<Result<Vec<_>>>()?;
        let target = out.join(format!("{}.{}", file_stem(path), scanpath::EXTENSION));
        scanpath::save(&target, &paths)?;
        Ok((target, paths.iter().map(|p| p.fixations.len()).sum()))
    });
    let mut fixations = 0;
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok((target, n)) => {
                outcome.processed += 1;
                fixations += n;
                outcome.outputs.push(target);
            }
            Err(err) => outcome.fail(path.display().to_string(), err),
        }
    }
    outcome.detail("fixations", fixations);
    Ok(outcome)
}

fn load_scanpaths(inputs: &[PathBuf]) -> Result<(Vec<Scanpath>, Vec<Failure>)> {
    let mut all = Vec::new();
    let mut failures = Vec::new();
    for path in collect_files(inputs, scanpath::EXTENSION)? {
        match scanpath::load(&path) {
            Ok(s) => all.extend(s),
            Err(err) => failures.push(Failure {
                item: path.display().to_string(),
                error: err.to_string(),
            }),
        }
    }
    Ok((all, failures))
}

fn group_by_stimulus<T: Clone>(items: &[T], id: impl Fn(&T) -> &str) -> BTreeMap<String, Vec<T>> {
    let mut groups: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for item in items {
        groups.entry(id(item).to_string()).or_default().push(item.clone());
    }
    groups
}

/// One saliency map per stimulus from all scanpaths found under `inputs`.
pub fn saliency(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<Outcome> {
    let mut outcome = Outcome::new("saliency");
    let (paths, failures) = load_scanpaths(inputs)?;
    for f in failures {
        outcome.fail(f.item, f.error);
    }
    let groups: Vec<(String, Vec<Scanpath>)> = group_by_stimulus(&paths, |s| &s.stimulus_id).into_iter().collect();
    let results = par_map(&groups, cfg.workers, |(id, group)| -> Result<Vec<PathBuf>> {
        let map = build_saliency(group, cfg.frame_size(), cfg.saliency_sigma)?;
        let pfm = out.join(format!("{id}.pfm"));
        let pgm = out.join(format!("{id}.pgm"));
        saliency::save_pfm(&pfm, &map)?;
        saliency::save_pgm(&pgm, &map)?;
        Ok(vec![pfm, pgm])
    });
    for ((id, _), r) in groups.iter().zip(results) {
        match r {
            Ok(files) => {
                outcome.processed += 1;
                outcome.outputs.extend(files);
            }
            Err(err) => outcome.fail(id.clone(), err),
        }
    }
    Ok(outcome)
}

/// Per-image best/mean over the defined entries of a distance matrix;
/// pairs whose distance is undefined (e.g. an empty scanpath) are left out.
fn aggregate_defined(rows: Vec<Vec<Option<f64>>>) -> (Option<(f64, f64)>, usize) {
    let mut dropped = 0;
    let kept: Vec<Vec<f64>> = rows
        .into_iter()
        .filter_map(|r| {
            let before = r.len();
            let row: Vec<f64> = r.into_iter().flatten().collect();
            dropped += before - row.len();
            (!row.is_empty()).then_some(row)
        })
        .collect();
    match aggregate(&kept) {
        Ok(s) => (Some((s.mean, s.best)), dropped),
        Err(_) => (None, dropped),
    }
}

fn metric_rows(
    level: &str,
    gt: &[Vec<Point>],
    gen: &[Vec<Point>],
    params: &MetricParams,
) -> (Vec<(String, f64, f64)>, Vec<String>) {
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for metric in Metric::ALL {
        let matrix: Vec<Vec<Option<f64>>> = gt
            .iter()
            .map(|g| {
                gen.iter()
                    .map(|s| gazediff_core::metrics::distance(metric, g, s, params).ok())
                    .collect()
            })
            .collect();
        let name = format!("{level}.{}", metric.name());
        match aggregate_defined(matrix) {
            (Some((mean, best)), dropped) => {
                if dropped > 0 {
                    notes.push(format!("{name}: {dropped} undefined pairs left out"));
                }
                rows.push((name, mean, best));
            }
            (None, _) => notes.push(format!("{name}: no defined pairs")),
        }
    }
    (rows, notes)
}

/// Scores generated trajectories against ground truth per stimulus, at
/// scanpath level (fixation centroids) and trajectory level (raw samples),
/// optionally with the saliency metrics.
pub fn evaluate(
    cfg: &RunConfig,
    gt_inputs: &[PathBuf],
    gen_inputs: &[PathBuf],
    dataset: &str,
    with_saliency: bool,
    out: &Path,
) -> Result<(Outcome, report::MetricReport)> {
    let mut outcome = Outcome::new("evaluate");
    let load = |inputs: &[PathBuf], outcome: &mut Outcome| -> Result<Vec<Trajectory>> {
        let mut all = Vec::new();
        for path in collect_files(inputs, trajectories::EXTENSION)? {
            match trajectories::load(&path) {
                Ok(t) => all.extend(t),
                Err(err) => outcome.fail(path.display().to_string(), err),
            }
        }
        Ok(all)
    };
    let gt = group_by_stimulus(&load(gt_inputs, &mut outcome)?, |t| &t.stimulus_id);
    let gen = group_by_stimulus(&load(gen_inputs, &mut outcome)?, |t| &t.stimulus_id);
    let mut images = Vec::new();
    for id in gen.keys() {
        if gt.contains_key(id) {
            images.push(id.clone());
        } else {
            outcome.fail(id.clone(), "generated trajectories have no ground truth");
        }
    }
    let params = cfg.metrics();
    let results = par_map(
        &images,
        cfg.workers,
        |id| -> Result<(Vec<(String, f64, f64)>, Vec<String>)> {
            let (g, s) = (&gt[id], &gen[id]);
            let pixels = |ts: &Vec<Trajectory>| -> Vec<Vec<Point>> {
                ts.iter().map(|t| t.denormalize(cfg.frame_size())).collect()
            };
            let gsp = g
                .iter()
                .map(|t| scanpath_of(cfg, t))
                .collect::<gazediff_core::Result<Vec<_>>>()?;
            let ssp = s
                .iter()
                .map(|t| scanpath_of(cfg, t))
                .collect::<gazediff_core::Result<Vec<_>>>()?;
            let points = |sp: &Vec<Scanpath>| -> Vec<Vec<Point>> { sp.iter().map(Scanpath::points).collect() };
            let (mut rows, mut notes) = metric_rows("scanpath", &points(&gsp), &points(&ssp), &params);
            let (traj_rows, traj_notes) = metric_rows("trajectory", &pixels(g), &pixels(s), &params);
            rows.extend(traj_rows);
            notes.extend(traj_notes);
            if with_saliency {
                let frame = cfg.frame_size();
                let fixated: Vec<usize> = {
                    let mut v: Vec<usize> = gsp
                        .iter()
                        .flat_map(|p| &p.fixations)
                        .map(|f| {
                            let (r, c) = fixation_pixel(f.x, f.y, frame);
                            r * frame.1 + c
                        })
                        .collect();
                    v.sort_unstable();
                    v.dedup();
                    v
                };
                if fixated.is_empty() {
                    notes.push("saliency: ground truth has no fixations".into());
                } else {
                    let gt_map = build_saliency(&gsp, frame, cfg.saliency_sigma)?;
                    let pred = if ssp.iter().any(|p| !p.fixations.is_empty()) {
                        build_saliency(&ssp, frame, cfg.saliency_sigma)?
                    } else {
                        notes.push("saliency: generated trajectories have no fixations; uniform prediction".into());
                        let n = frame.0 * frame.1;
                        SaliencyMap::new(frame.0, frame.1, vec![1.0 / n as f64; n])?
                    };
                    let sc = saliency_metrics(&pred, &gt_map, &fixated, cfg.seed)?;
                    if sc.degenerate {
                        notes.push("saliency: prediction has zero variance".into());
                    }
                    for (name, v) in [
                        ("auc_judd", sc.auc_judd),
                        ("auc_borji", sc.auc_borji),
                        ("nss", sc.nss),
                        ("sim", sc.sim),
                        ("cc", sc.cc),
                        ("kl", sc.kl),
                    ] {
                        rows.push((format!("saliency.{name}"), v, v));
                    }
                }
            }
            Ok((rows, notes.into_iter().map(|n| format!("{id}: {n}")).collect()))
        },
    );
    let mut rep = report::MetricReport {
        dataset: dataset.to_string(),
        ..report::MetricReport::default()
    };
    for (id, r) in images.iter().zip(results) {
        match r {
            Ok((rows, notes)) => {
                outcome.processed += 1;
                rep.notes.extend(notes);
                rep.rows
                    .extend(rows.into_iter().map(|(metric, mean, best)| report::Row {
                        dataset: dataset.to_string(),
                        image: id.clone(),
                        metric,
                        mean,
                        best,
                    }));
            }
            Err(err) => outcome.fail(id.clone(), err),
        }
    }
    rep.notes.push(format!(
        "fixations from dispersion {} px and minimum duration {} s; scanpath scores depend on these",
        cfg.dispersion_px, cfg.min_duration_s
    ));
    rep.counts = report::Counts {
        images: outcome.processed,
        ground_truth: images.iter().map(|id| gt[id].len()).sum(),
        generated: images.iter().map(|id| gen[id].len()).sum(),
        skipped: gt.keys().filter(|id| !gen.contains_key(*id)).count(),
    };
    rep.summarize();
    let (csv, json) = (out.join("report.csv"), out.join("report.json"));
    rep.save(&csv, &json)?;
    outcome.outputs = vec![csv, json];
    outcome.detail("overall", &rep.overall);
    Ok((outcome, rep))
}

fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("lo,hi,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        out.push_str(&format!("{},{},{c}\n", h.edges[i], h.edges[i + 1]));
    }
    out
}

/// How far the horizontal direction bins rise above the average bin:
/// the mean of the two bins either side of 0° and of the two bins at ±180°,
/// each divided by the mean bin count.
pub fn horizontal_bias(directions: &Histogram) -> Option<(f64, f64)> {
    let n = directions.counts.len();
    let mean = directions.mean_count();
    let zero = directions.bin_of(0.0)?;
    if n < 4 || zero == 0 || !(mean > 0.0) {
        return None;
    }
    let c = |i: usize| directions.counts[i] as f64;
    Some(((c(zero - 1) + c(zero)) / 2.0 / mean, (c(0) + c(n - 1)) / 2.0 / mean))
}

/// Saccade amplitude, direction and turn-angle histograms as CSV files.
pub fn stats(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<Outcome> {
    let mut outcome = Outcome::new("stats");
    let (paths, failures) = load_scanpaths(inputs)?;
    for f in failures {
        outcome.fail(f.item, f.error);
    }
    let st = scanpath_stats(&paths);
    let (amp, dir, turn) = stats_histograms(&st, cfg.amplitude_max)?;
    for (name, h) in [("amplitude", &amp), ("direction", &dir), ("turn_angle", &turn)] {
        let p = out.join(format!("{name}.csv"));
        formats::write_atomic(&p, histogram_csv(h).as_bytes())?;
        outcome.outputs.push(p);
    }
    outcome.processed = paths.len();
    outcome.detail("saccades", st.amplitudes.len());
    if let Some((zero, flip)) = horizontal_bias(&dir) {
        outcome.detail("direction_peak_ratio_0", zero);
        outcome.detail("direction_peak_ratio_180", flip);
    }
    Ok(outcome)
}

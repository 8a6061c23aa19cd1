//! Synthetic two-blob stimuli with gaze that dwells on the blob, used to
//! test whether the model follows its conditioning.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{synth_grid, Blob, FeatureGrid};
use crate::gaze::{GazeSample, RawRecording};

/// The two blob anchors in relative frame coordinates (x, y).
pub const ANCHORS: [[f64; 2]; 2] = [[0.25, 0.25], [0.75, 0.75]];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub stimuli: usize,
    pub recordings_per_stimulus: usize,
    /// Raw samples per recording.
    pub samples: usize,
    pub rate_hz: f64,
    /// Stimulus size in pixels, `(height, width)`.
    pub frame: (usize, usize),
    /// Feature grid size, `(height, width)`.
    pub grid: (usize, usize),
    pub feat_dim: usize,
    /// Width of the feature blob, relative to the frame.
    pub blob_sigma: f64,
    /// Spread of fixation positions around the blob center, relative to the frame.
    pub spread: f64,
    /// Maximum displacement of a blob from its anchor, relative to the frame.
    pub anchor_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            stimuli: 40,
            recordings_per_stimulus: 8,
            samples: 720,
            rate_hz: 240.0,
            frame: (224, 224),
            grid: (32, 32),
            feat_dim: 64,
            blob_sigma: 0.08,
            spread: 0.05,
            anchor_jitter: 0.03,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStimulus {
    pub id: String,
    /// Index into [`ANCHORS`].
    pub anchor: usize,
    /// Blob center, relative (x, y).
    pub center: [f64; 2],
    pub grid: FeatureGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub stimuli: Vec<SynthStimulus>,
    pub recordings: Vec<RawRecording>,
}

impl SynthDataset {
    pub fn stimulus(&self, id: &str) -> Option<&SynthStimulus> {
        self.stimuli.iter().find(|s| s.id == id)
    }
}

/// Relative coordinate to model space `[-1, 1]`.
pub fn to_model(rel: f64) -> f64 {
    2.0 * rel - 1.0
}

pub fn stimulus_id(i: usize) -> String {
    format!("blob{i:04}")
}

fn recording<R: Rng>(cfg: &SynthConfig, stimulus: &SynthStimulus, subject: usize, rng: &mut R) -> RawRecording {
    let spread = Normal::new(0.0, cfg.spread).expect("spread");
    let tremor = Normal::new(0.0, cfg.spread / 6.0).expect("tremor");
    let (h, w) = cfg.frame;
    let to_px = |rel: f64, size: usize| rel.clamp(0.0, 1.0) * (size - 1) as f64;
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(cfg.samples);
    let mut previous: Option<[f64; 2]> = None;
    while points.len() < cfg.samples {
        let target = [
            stimulus.center[0] + spread.sample(rng),
            stimulus.center[1] + spread.sample(rng),
        ];
        if let Some(from) = previous {
            let hops = rng.random_range(2..=4);
            for k in 1..hops {
                let f = k as f64 / hops as f64;
                points.push([from[0] + f * (target[0] - from[0]), from[1] + f * (target[1] - from[1])]);
            }
        }
        let dwell = (rng.random_range(0.15..0.4) * cfg.rate_hz).ceil().max(1.0) as usize;
        for _ in 0..dwell {
            points.push([target[0] + tremor.sample(rng), target[1] + tremor.sample(rng)]);
        }
        previous = Some(target);
    }
    points.truncate(cfg.samples);
    RawRecording {
        subject_id: format!("sub{subject:02}"),
        stimulus_id: stimulus.id.clone(),
        samples: points
            .iter()
            .enumerate()
            .map(|(i, p)| GazeSample {
                t: i as f64 / cfg.rate_hz,
                x: to_px(p[0], w),
                y: to_px(p[1], h),
                valid: true,
            })
            .collect(),
        rate_hz: cfg.rate_hz,
    }
}

/// Stimuli alternate between the two anchors; each grid holds one blob
/// with signature `e_0`, and each recording fixates around that blob.
pub fn two_blob_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.stimuli == 0 || cfg.samples == 0 || !(cfg.rate_hz > 0.0) {
        return Err(Error::Config(format!("synthetic dataset config {cfg:?}")));
    }
    if !(cfg.spread > 0.0 && cfg.blob_sigma > 0.0 && cfg.anchor_jitter >= 0.0) {
        return Err(Error::Config("spread and blob_sigma must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stimuli = Vec::with_capacity(cfg.stimuli);
    for i in 0..cfg.stimuli {
        let anchor = i % 2;
        let j = cfg.anchor_jitter;
        let jitter = |rng: &mut ChaCha8Rng| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
        let center = [
            ANCHORS[anchor][0] + jitter(&mut rng),
            ANCHORS[anchor][1] + jitter(&mut rng),
        ];
        let blob = Blob {
            cx: center[0],
            cy: center[1],
            sigma: cfg.blob_sigma,
        };
        let id = stimulus_id(i);
        let grid = synth_grid(id.clone(), &[blob], (cfg.grid.0, cfg.grid.1, cfg.feat_dim))?;
        stimuli.push(SynthStimulus {
            id,
            anchor,
            center,
            grid,
        });
    }
    let mut recordings = Vec::with_capacity(cfg.stimuli * cfg.recordings_per_stimulus);
    for s in &stimuli {
        for subject in 0..cfg.recordings_per_stimulus {
            recordings.push(recording(cfg, s, subject, &mut rng));
        }
    }
    Ok(SynthDataset {
        config: cfg.clone(),
        stimuli,
        recordings,
    })
}

/// Fraction of model-space points within `radius` of `center`.
pub fn fraction_within(points: &[[f32; 2]], center: [f64; 2], radius: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let inside = points
        .iter()
        .filter(|p| libm::hypot(p[0] as f64 - center[0], p[1] as f64 - center[1]) <= radius)
        .count();
    inside as f64 / points.len() as f64
}

/// Fraction of points closer to `a` than to `b`.
pub fn fraction_nearer(points: &[[f32; 2]], a: [f64; 2], b: [f64; 2]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let d = |p: &[f32; 2], c: [f64; 2]| libm::hypot(p[0] as f64 - c[0], p[1] as f64 - c[1]);
    points.iter().filter(|p| d(p, a) < d(p, b)).count() as f64 / points.len() as f64
}

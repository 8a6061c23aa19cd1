//! Key-value run configuration.
//!
//! Files hold `key = value` lines; `#` starts a comment. Every key is listed
//! in [`KEYS`]; anything else is rejected, as is a key given twice in one file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use gazediff_core::denoiser::DenoiserConfig;
use gazediff_core::diffusion::{GuidanceConfig, Schedule, TrainConfig};
use gazediff_core::events::FixationParams;
use gazediff_core::gaze::{PreprocessConfig, TruncateFrom};
use gazediff_core::metrics::{CellGrid, MetricParams, TdeParams};
use gazediff_core::optim::AdamConfig;
use gazediff_core::synth::SynthConfig;

use crate::error::{Error, Result};

/// Comma-separated list of positive integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct List(pub Vec<usize>);

impl FromStr for List {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad list item {p:?}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(List)
    }
}

impl fmt::Display for List {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncate(pub TruncateFrom);

impl FromStr for Truncate {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "head" => Ok(Truncate(TruncateFrom::KeepHead)),
            "tail" => Ok(Truncate(TruncateFrom::KeepTail)),
            other => Err(format!("expected head or tail, found {other:?}")),
        }
    }
}

impl fmt::Display for Truncate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            TruncateFrom::KeepHead => "head",
            TruncateFrom::KeepTail => "tail",
        })
    }
}

macro_rules! config {
    ($($key:ident: $ty:ty = $default:expr, $doc:literal;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        #[allow(non_snake_case)]
        pub struct RunConfig {
            $(#[doc = $doc] pub $key: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($key: $default,)* }
            }
        }

        /// Every accepted key with its description.
        pub const KEYS: &[(&str, &str)] = &[$((stringify!($key), $doc),)*];

        impl RunConfig {
            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = value.parse::<$ty>().map_err(|e| {
                            Error::Config(format!("{key} = {value:?}: {e}"))
                        })?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// All keys in `key = value` form; parses back to an equal config.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", stringify!($key), self.$key));)*
                out
            }
        }
    };
}

config! {
    seed: u64 = 0, "Seed for splits, initialization, training draws and sampling.";
    workers: usize = 1, "Upper bound on worker threads for per-stimulus work.";
    seq_len: usize = 720, "Trajectory length L after preprocessing.";
    frame: usize = 224, "Side of the square frame scanpaths are measured in, in pixels.";
    outside_tolerance: f64 = 0.05, "Samples further outside the stimulus than this fraction are blinks.";
    truncate_below: f64 = 1.05, "Recordings shorter than seq_len times this are truncated, not resampled.";
    truncate: Truncate = Truncate(TruncateFrom::KeepHead), "Which end survives truncation: head or tail.";
    test_fraction: f64 = 0.1, "Fraction of stimuli held out for testing.";
    depth: usize = 3, "Number of down and up blocks.";
    channels: List = List(vec![64, 128, 256]), "Channels per level, comma separated, one per block.";
    embed_dim: usize = 64, "Embedding dimension D.";
    heads: usize = 4, "Attention heads.";
    feat_dim: usize = 64, "Depth of the feature grids fed to the model.";
    grid_height: usize = 32, "Model-side feature grid rows; stored grids are resampled to this.";
    grid_width: usize = 32, "Model-side feature grid columns.";
    cross_attention: bool = true, "Cross-attention to feature tokens in every block.";
    use_cpe: bool = true, "Add positional codes to trajectory and feature tokens.";
    patch_level: bool = true, "Condition on patch tokens; false uses one pooled global token.";
    T_diff: usize = 1000, "Number of diffusion steps.";
    beta_start: f64 = 1e-4, "First noise variance of the linear schedule.";
    beta_end: f64 = 2e-2, "Last noise variance of the linear schedule.";
    ddim_steps: usize = 50, "Sampling steps.";
    cfg_scale: f64 = 4.0, "Guidance scale; 1 is purely conditional, 0 purely unconditional.";
    uncond_dropout: f64 = 0.1, "Fraction of training items whose grid is replaced by zeros.";
    lr: f64 = 1e-4, "Adam learning rate.";
    batch: usize = 32, "Training batch size.";
    train_steps: usize = 2000, "Optimizer steps; 0 trains for `epochs` passes over the data instead.";
    epochs: usize = 3000, "Passes over the data when train_steps is 0.";
    checkpoint_every: usize = 0, "Also write a checkpoint every this many steps; 0 writes only the final one.";
    samples_per_stimulus: usize = 15, "Trajectories generated per test stimulus.";
    sample_rate_hz: f64 = 240.0, "Sampling rate assigned to generated trajectories; train records the median training rate.";
    dispersion_px: f64 = 25.0, "Fixation dispersion threshold in frame pixels.";
    min_duration_s: f64 = 0.1, "Minimum fixation duration in seconds.";
    saliency_sigma: f64 = 25.0, "Gaussian blur of saliency maps in frame pixels.";
    levenshtein_rows: usize = 12, "Rows of the Levenshtein cell alphabet.";
    levenshtein_cols: usize = 16, "Columns of the Levenshtein cell alphabet.";
    tde_k: usize = 5, "Sub-sequence length for time delay embedding.";
    tde_stride: usize = 1, "Step between ground-truth sub-sequences for time delay embedding.";
    amplitude_max: f64 = 224.0, "Upper edge of the saccade amplitude histogram in pixels.";
    synth_stimuli: usize = 40, "Synthetic stimuli.";
    synth_recordings: usize = 8, "Synthetic recordings per stimulus.";
    synth_samples: usize = 720, "Raw samples per synthetic recording.";
    synth_rate_hz: f64 = 240.0, "Sampling rate of synthetic recordings.";
    synth_spread: f64 = 0.05, "Spread of synthetic fixations around the blob, relative to the frame.";
    synth_blob_sigma: f64 = 0.08, "Width of the synthetic feature blob, relative to the frame.";
}

impl RunConfig {
    /// Applies a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("{origin}:{}: {key} given twice", n + 1)));
            }
            self.set(key, value.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let conflict = |m: String| Err(Error::Config(m));
        if self.channels.0.len() != self.depth {
            return conflict(format!(
                "channels lists {} levels but depth is {}",
                self.channels.0.len(),
                self.depth
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return conflict(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        if self.workers == 0 || self.frame < 2 {
            return conflict("workers and frame must be positive".into());
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.T_diff {
            return conflict(format!("ddim_steps {} outside 1..={}", self.ddim_steps, self.T_diff));
        }
        if self.train_steps == 0 && self.epochs == 0 {
            return conflict("train_steps and epochs are both 0".into());
        }
        self.schedule()?;
        self.denoiser().validate()?;
        Ok(())
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            seq_len: self.seq_len,
            outside_tolerance: self.outside_tolerance,
            truncate_below: self.truncate_below,
            truncate: self.truncate.0,
        }
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.frame, self.frame)
    }

    pub fn denoiser(&self) -> DenoiserConfig {
        DenoiserConfig {
            seq_len: self.seq_len,
            depth: self.depth,
            channels: self.channels.0.clone(),
            embed_dim: self.embed_dim,
            heads: self.heads,
            feat_dim: self.feat_dim,
            grid: (self.grid_height, self.grid_width),
            frame: self.frame_size(),
            cross_attention: self.cross_attention,
            use_cpe: self.use_cpe,
            patch_level: self.patch_level,
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Ok(Schedule::linear(self.T_diff, self.beta_start, self.beta_end)?)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch: self.batch,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            uncond_dropout: self.uncond_dropout,
        }
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig { scale: self.cfg_scale }
    }

    pub fn fixation(&self) -> FixationParams {
        FixationParams {
            dispersion_px: self.dispersion_px,
            min_duration_s: self.min_duration_s,
        }
    }

    pub fn metrics(&self) -> MetricParams {
        MetricParams {
            frame: self.frame_size(),
            grid: CellGrid {
                rows: self.levenshtein_rows,
                cols: self.levenshtein_cols,
            },
            tde: TdeParams {
                k: self.tde_k,
                stride: self.tde_stride,
            },
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            stimuli: self.synth_stimuli,
            recordings_per_stimulus: self.synth_recordings,
            samples: self.synth_samples,
            rate_hz: self.synth_rate_hz,
            frame: self.frame_size(),
            grid: (self.grid_height, self.grid_width),
            feat_dim: self.feat_dim,
            blob_sigma: self.synth_blob_sigma,
            spread: self.synth_spread,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }
}

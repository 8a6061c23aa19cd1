//! Raw recordings, preprocessing into fixed-length trajectories, and
//! stimulus-level train/test splits.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Trajectory length used throughout the model.
pub const DEFAULT_SEQ_LEN: usize = 720;
/// Side of the square frame stimuli are resized to.
pub const FRAME_SIZE: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    /// Seconds since recording start.
    pub t: f64,
    /// Pixels in the original stimulus.
    pub x: f64,
    pub y: f64,
    /// Recorder validity flag; `false` marks blinks and tracking loss.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub subject_id: String,
    pub stimulus_id: String,
    pub samples: Vec<GazeSample>,
    pub rate_hz: f64,
}

impl RawRecording {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "sampling rate must be > 0, got {}",
                self.rate_hz
            )));
        }
        if let Some(w) = self.samples.windows(2).position(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Sequence(format!(
                "sample times not strictly increasing at index {}",
                w + 1
            )));
        }
        Ok(())
    }
}

/// A fixed-length gaze trajectory in model space `[-1, 1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub stimulus_id: String,
    pub coords: Vec<[f32; 2]>,
    /// Effective sampling rate after resampling.
    pub rate_hz: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Maps model space onto pixel space of a `(height, width)` frame:
    /// `-1 -> 0` and `1 -> size - 1` on each axis.
    pub fn denormalize(&self, size: (usize, usize)) -> Vec<[f64; 2]> {
        self.coords
            .iter()
            .map(|&[x, y]| [denormalize_axis(x as f64, size.1), denormalize_axis(y as f64, size.0)])
            .collect()
    }
}

pub fn normalize_axis(pixel: f64, size: usize) -> f64 {
    2.0 * pixel / (size.max(2) - 1) as f64 - 1.0
}

pub fn denormalize_axis(value: f64, size: usize) -> f64 {
    (value + 1.0) * 0.5 * (size.max(2) - 1) as f64
}

/// Which end of an overlong recording survives truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruncateFrom {
    #[default]
    KeepHead,
    KeepTail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub seq_len: usize,
    /// Samples this far outside the stimulus, as a fraction of its size,
    /// are treated as blinks.
    pub outside_tolerance: f64,
    /// Recordings shorter than `seq_len * truncate_below` are truncated
    /// instead of resampled.
    pub truncate_below: f64,
    pub truncate: TruncateFrom,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            seq_len: DEFAULT_SEQ_LEN,
            outside_tolerance: 0.05,
            truncate_below: 1.05,
            truncate: TruncateFrom::KeepHead,
        }
    }
}

fn usable(s: &GazeSample, size: (usize, usize), tol: f64) -> bool {
    let (h, w) = (size.0 as f64, size.1 as f64);
    s.valid
        && s.t.is_finite()
        && s.x.is_finite()
        && s.y.is_finite()
        && s.x >= -tol * w
        && s.x <= (w - 1.0) + tol * w
        && s.y >= -tol * h
        && s.y <= (h - 1.0) + tol * h
}

fn interpolate_in_time(kept: &[GazeSample], len: usize) -> Vec<GazeSample> {
    let (t0, t1) = (kept[0].t, kept[kept.len() - 1].t);
    let mut j = 0;
    (0..len)
        .map(|i| {
            let t = if len == 1 {
                t0
            } else {
                t0 + (t1 - t0) * i as f64 / (len - 1) as f64
            };
            while j + 2 < kept.len() && kept[j + 1].t <= t {
                j += 1;
            }
            let (a, b) = (kept[j], kept[j + 1]);
            let f = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
            GazeSample {
                t,
                x: a.x + f * (b.x - a.x),
                y: a.y + f * (b.y - a.y),
                valid: true,
            }
        })
        .collect()
}

/// Drops blinks, rejects short recordings, brings the rest to exactly
/// `config.seq_len` samples and maps pixels of a `(height, width)` stimulus
/// into `[-1, 1]²`.
pub fn preprocess(rec: &RawRecording, stimulus_size: (usize, usize), config: &PreprocessConfig) -> Result<Trajectory> {
    rec.validate()?;
    let len = config.seq_len;
    if len == 0 {
        return Err(Error::Config("seq_len must be positive".into()));
    }
    let kept: Vec<GazeSample> = rec
        .samples
        .iter()
        .copied()
        .filter(|s| usable(s, stimulus_size, config.outside_tolerance))
        .collect();
    let n = kept.len();
    if n == 0 {
        return Err(Error::EmptyRecording);
    }
    if n < len {
        return Err(Error::TooShort {
            valid: n,
            required: len,
        });
    }
    let (resampled, rate_hz): (Vec<GazeSample>, f64) = if (n as f64) < len as f64 * config.truncate_below {
        let head = match config.truncate {
            TruncateFrom::KeepHead => kept[..len].to_vec(),
            TruncateFrom::KeepTail => kept[n - len..].to_vec(),
        };
        (head, rec.rate_hz)
    } else if n.is_multiple_of(len) {
        let factor = n / len;
        (
            (0..len).map(|i| kept[i * factor]).collect(),
            rec.rate_hz / factor as f64,
        )
    } else {
        let span = kept[n - 1].t - kept[0].t;
        let rate = if len > 1 && span > 0.0 {
            (len - 1) as f64 / span
        } else {
            rec.rate_hz
        };
        (interpolate_in_time(&kept, len), rate)
    };
    let coords = resampled
        .iter()
        .map(|s| {
            let x = normalize_axis(s.x, stimulus_size.1).clamp(-1.0, 1.0);
            let y = normalize_axis(s.y, stimulus_size.0).clamp(-1.0, 1.0);
            [x as f32, y as f32]
        })
        .collect();
    Ok(Trajectory {
        stimulus_id: rec.stimulus_id.clone(),
        coords,
        rate_hz,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn is_test(&self, stimulus_id: &str) -> bool {
        self.test.contains(stimulus_id)
    }
}

/// Partitions stimuli (never individual recordings) into train and test.
/// The test set holds `round(n * test_fraction)` stimuli, at least one and
/// at most `n - 1`.
pub fn split(stimuli: &[String], seed: u64, test_fraction: f64) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let unique: BTreeSet<String> = stimuli.iter().cloned().collect();
    let n = unique.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 stimuli, have {n}")));
    }
    let n_test = libm::round(n as f64 * test_fraction).clamp(1.0, (n - 1) as f64) as usize;
    let mut order: Vec<String> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order[..n_test].iter().cloned().collect();
    let train = order[n_test..].iter().cloned().collect();
    Ok(DatasetSplit { train, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn recording(points: &[(f64, f64, bool)]) -> RawRecording {
        RawRecording {
            subject_id: "s".into(),
            stimulus_id: "img".into(),
            samples: points
                .iter()
                .enumerate()
                .map(|(i, &(x, y, valid))| GazeSample {
                    t: i as f64 / 240.0,
                    x,
                    y,
                    valid,
                })
                .collect(),
            rate_hz: 240.0,
        }
    }

    fn ramp(n: usize) -> Vec<(f64, f64, bool)> {
        (0..n).map(|i| ((i % 100) as f64, (i % 50) as f64, true)).collect()
    }

    #[test]
    fn rejects_719_valid_samples() {
        let err = preprocess(&recording(&ramp(719)), (100, 100), &PreprocessConfig::default());
        assert_eq!(
            err.unwrap_err(),
            Error::TooShort {
                valid: 719,
                required: 720
            }
        );
    }

    #[test]
    fn blinks_count_against_the_minimum() {
        let mut pts = ramp(725);
        for p in pts.iter_mut().take(6) {
            p.2 = false;
        }
        assert!(matches!(
            preprocess(&recording(&pts), (100, 100), &PreprocessConfig::default()),
            Err(Error::TooShort { valid: 719, .. })
        ));
    }

    #[test]
    fn far_outside_samples_are_blinks_but_near_ones_are_clamped() {
        let mut pts = ramp(721);
        pts[0] = (-20.0, 10.0, true); // 20% outside: dropped
        pts[1] = (-3.0, 10.0, true); // 3% outside: kept, clamped
        let traj = preprocess(&recording(&pts), (100, 100), &PreprocessConfig::default()).unwrap();
        assert_eq!(traj.coords[0][0], -1.0);
        assert_eq!(traj.len(), 720);
    }

    #[test]
    fn no_valid_samples_is_an_empty_recording() {
        let pts = vec![(1.0, 1.0, false); 10];
        assert_eq!(
            preprocess(&recording(&pts), (100, 100), &PreprocessConfig::default()),
            Err(Error::EmptyRecording)
        );
    }

    #[test]
    fn exact_length_is_only_normalized() {
        let pts = ramp(720);
        let traj = preprocess(&recording(&pts), (51, 101), &PreprocessConfig::default()).unwrap();
        for (c, p) in traj.coords.iter().zip(&pts) {
            assert!((c[0] as f64 - (2.0 * p.0 / 100.0 - 1.0)).abs() < 1e-6);
            assert!((c[1] as f64 - (2.0 * p.1 / 50.0 - 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn double_length_is_decimated() {
        let pts = ramp(1440);
        let traj = preprocess(&recording(&pts), (100, 100), &PreprocessConfig::default()).unwrap();
        for (i, c) in traj.coords.iter().enumerate() {
            let src = pts[2 * i];
            assert!((c[0] as f64 - normalize_axis(src.0, 100)).abs() < 1e-6, "sample {i}");
            assert!((c[1] as f64 - normalize_axis(src.1, 100)).abs() < 1e-6, "sample {i}");
        }
        assert_eq!(traj.rate_hz, recording(&pts).rate_hz / 2.0);
    }

    #[test]
    fn slightly_long_recordings_are_truncated() {
        let pts = ramp(750);
        let head = preprocess(&recording(&pts), (100, 100), &PreprocessConfig::default()).unwrap();
        assert_eq!(head.coords[0][0], normalize_axis(pts[0].0, 100) as f32);
        let tail_cfg = PreprocessConfig {
            truncate: TruncateFrom::KeepTail,
            ..PreprocessConfig::default()
        };
        let tail = preprocess(&recording(&pts), (100, 100), &tail_cfg).unwrap();
        assert_eq!(tail.coords[0][0], normalize_axis(pts[30].0, 100) as f32);
    }

    #[test]
    fn other_lengths_are_interpolated_in_time() {
        // x = t * 240 / 10, a linear ramp; interpolation reproduces it exactly.
        let pts: Vec<(f64, f64, bool)> = (0..1000).map(|i| (i as f64 / 10.0, 5.0, true)).collect();
        let traj = preprocess(&recording(&pts), (101, 101), &PreprocessConfig::default()).unwrap();
        assert_eq!(traj.len(), 720);
        for (i, c) in traj.coords.iter().enumerate() {
            let px = 99.9 * i as f64 / 719.0;
            assert!((c[0] as f64 - normalize_axis(px, 101)).abs() < 1e-5, "sample {i}");
        }
    }

    #[test]
    fn non_increasing_times_are_rejected() {
        let mut rec = recording(&ramp(720));
        rec.samples[5].t = rec.samples[4].t;
        assert!(matches!(
            preprocess(&rec, (100, 100), &PreprocessConfig::default()),
            Err(Error::Sequence(_))
        ));
    }

    #[test]
    fn denormalize_corners_and_center() {
        let traj = Trajectory {
            stimulus_id: "a".into(),
            coords: vec![[-1.0, -1.0], [1.0, 1.0], [0.0, 0.0]],
            rate_hz: 240.0,
        };
        let px = traj.denormalize((224, 224));
        assert_eq!(px[0], [0.0, 0.0]);
        assert_eq!(px[1], [223.0, 223.0]);
        assert_eq!(px[2], [111.5, 111.5]);
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| alloc::format!("img{i:04}")).collect()
    }

    #[test]
    fn split_sizes() {
        assert_eq!(split(&ids(1003), 0, 0.1).unwrap().test.len(), 100);
        assert_eq!(split(&ids(10), 0, 0.1).unwrap().test.len(), 1);
        assert!(split(&ids(1), 0, 0.1).is_err());
        assert!(split(&ids(5), 0, 1.0).is_err());
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let all = ids(57);
        let a = split(&all, 42, 0.1).unwrap();
        let b = split(&all, 42, 0.1).unwrap();
        assert_eq!(a, b);
        assert!(a.train.is_disjoint(&a.test));
        assert_eq!(a.train.len() + a.test.len(), all.len());
        let c = split(&all, 43, 0.1).unwrap();
        assert_ne!(a.test, c.test);
        assert!(a.is_test(a.test.iter().next().unwrap()));
        assert!(!a.is_test("missing"));
    }
}

//! Fixations, scanpaths, saliency maps and saccade statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Pixels per degree of visual angle assumed for a 224-wide frame.
pub const DEGREE_PX: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixationParams {
    /// Maximum summed per-axis extent of a fixation window, in pixels.
    pub dispersion_px: f64,
    pub min_duration_s: f64,
}

impl Default for FixationParams {
    fn default() -> Self {
        FixationParams {
            dispersion_px: DEGREE_PX,
            min_duration_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    pub onset: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scanpath {
    pub stimulus_id: String,
    pub fixations: Vec<Fixation>,
}

impl Scanpath {
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.fixations.iter().map(|f| [f.x, f.y]).collect()
    }
}

#[derive(Clone, Copy)]
struct Extent {
    min: [f64; 2],
    max: [f64; 2],
}

impl Extent {
    fn of(points: &[[f64; 2]]) -> Self {
        let mut e = Extent {
            min: points[0],
            max: points[0],
        };
        for p in &points[1..] {
            e.include(*p);
        }
        e
    }

    fn include(&mut self, p: [f64; 2]) {
        for a in 0..2 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    fn dispersion(&self) -> f64 {
        (self.max[0] - self.min[0]) + (self.max[1] - self.min[1])
    }
}

/// Smallest sample count whose duration reaches `min_duration_s`.
pub fn min_window(rate_hz: f64, min_duration_s: f64) -> usize {
    (libm::ceil(min_duration_s * rate_hz - 1e-9) as usize).max(1)
}

/// Dispersion-threshold identification over a pixel-space trajectory.
pub fn extract_fixations(points: &[[f64; 2]], rate_hz: f64, params: &FixationParams) -> Result<Vec<Fixation>> {
    if points.is_empty() {
        return Err(Error::EmptyRecording);
    }
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(Error::Config(format!("sampling rate {rate_hz} must be positive")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: "trajectory".into(),
        });
    }
    let n = points.len();
    let window = min_window(rate_hz, params.min_duration_s);
    let mut fixations = Vec::new();
    let mut i = 0;
    while i + window <= n {
        let mut extent = Extent::of(&points[i..i + window]);
        if extent.dispersion() > params.dispersion_px {
            i += 1;
            continue;
        }
        let mut j = i + window;
        while j < n {
            let mut grown = extent;
            grown.include(points[j]);
            if grown.dispersion() > params.dispersion_px {
                break;
            }
            extent = grown;
            j += 1;
        }
        let count = (j - i) as f64;
        let (sx, sy) = points[i..j]
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        fixations.push(Fixation {
            x: sx / count,
            y: sy / count,
            onset: i as f64 / rate_hz,
            duration: count / rate_hz,
        });
        i = j;
    }
    Ok(fixations)
}

/// A dense `height × width` map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("saliency map", &[height, width], &[values.len()]));
        }
        Ok(SaliencyMap { height, width, values })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Rescales to sum 1; an all-zero map is left unchanged.
    pub fn normalized(mut self) -> Self {
        let s = self.sum();
        if s > 0.0 {
            for v in &mut self.values {
                *v /= s;
            }
        }
        self
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Nearest pixel of a fixation, clamped into the frame.
pub fn fixation_pixel(x: f64, y: f64, (height, width): (usize, usize)) -> (usize, usize) {
    let clamp = |v: f64, n: usize| libm::round(v).clamp(0.0, (n - 1) as f64) as usize;
    (clamp(y, height), clamp(x, width))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(4.0 * sigma) as i64;
    (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect()
}

fn convolve_rows(src: &[f64], height: usize, width: usize, kernel: &[f64], out: &mut [f64]) {
    let r = (kernel.len() / 2) as isize;
    for row in 0..height {
        let line = &src[row * width..(row + 1) * width];
        for col in 0..width {
            let lo = (col as isize - r).max(0);
            let hi = (col as isize + r).min(width as isize - 1);
            let mut acc = 0.0;
            for s in lo..=hi {
                acc += line[s as usize] * kernel[(s - col as isize + r) as usize];
            }
            out[row * width + col] = acc;
        }
    }
}

fn transpose(src: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..height {
        for c in 0..width {
            out[c * height + r] = src[r * width + c];
        }
    }
    out
}

/// Blurs `map` with an isotropic Gaussian, zero outside the frame.
pub fn gaussian_blur(map: &SaliencyMap, sigma: f64) -> Result<SaliencyMap> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("blur sigma {sigma} must be positive")));
    }
    let (h, w) = (map.height, map.width);
    let kernel = gaussian_kernel(sigma);
    let mut tmp = vec![0.0; h * w];
    convolve_rows(&map.values, h, w, &kernel, &mut tmp);
    let t = transpose(&tmp, h, w);
    let mut out = vec![0.0; h * w];
    convolve_rows(&t, w, h, &kernel, &mut out);
    SaliencyMap::new(h, w, transpose(&out, w, h))
}

/// Fixation impulses from every scanpath, blurred and normalized to sum 1.
pub fn build_saliency(scanpaths: &[Scanpath], dims: (usize, usize), sigma: f64) -> Result<SaliencyMap> {
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return Err(Error::Saliency(format!("map dims {dims:?} are empty")));
    }
    let mut impulses = SaliencyMap::new(h, w, vec![0.0; h * w])?;
    let mut count = 0;
    for f in scanpaths.iter().flat_map(|s| &s.fixations) {
        let (r, c) = fixation_pixel(f.x, f.y, dims);
        impulses.values[r * w + c] += 1.0;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Saliency("no fixations to build a map from".into()));
    }
    Ok(gaussian_blur(&impulses, sigma)?.normalized())
}

/// Saccade-level measurements pooled over scanpaths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanpathStats {
    pub amplitudes: Vec<f64>,
    /// Degrees in `(-180, 180]`, pixel axes (y down).
    pub directions: Vec<f64>,
    /// Signed turn between consecutive saccades, degrees in `(-180, 180]`.
    pub turn_angles: Vec<f64>,
}

fn degrees(radians: f64) -> f64 {
    let d = radians.to_degrees();
    if d <= -180.0 {
        d + 360.0
    } else {
        d
    }
}

pub fn scanpath_stats(scanpaths: &[Scanpath]) -> ScanpathStats {
    let mut stats = ScanpathStats::default();
    for s in scanpaths {
        let saccades: Vec<[f64; 2]> = s
            .fixations
            .windows(2)
            .map(|w| [w[1].x - w[0].x, w[1].y - w[0].y])
            .collect();
        for v in &saccades {
            stats.amplitudes.push(libm::hypot(v[0], v[1]));
            stats.directions.push(degrees(libm::atan2(v[1], v[0])));
        }
        for pair in saccades.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let cross = a[0] * b[1] - a[1] * b[0];
            let dot = a[0] * b[0] + a[1] * b[1];
            stats.turn_angles.push(degrees(libm::atan2(cross, dot)));
        }
    }
    stats
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; values outside are ignored and
    /// `hi` itself lands in the last bin.
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::Config(format!("histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            if v.is_finite() && v >= lo && v <= hi {
                let b = (libm::floor((v - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        Ok(Histogram { edges, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean_count(&self) -> f64 {
        self.total() as f64 / self.counts.len() as f64
    }

    /// Index of the bin containing `v`.
    pub fn bin_of(&self, v: f64) -> Option<usize> {
        let bins = self.counts.len();
        let (lo, hi) = (self.edges[0], self.edges[bins]);
        if !(v >= lo && v <= hi) {
            return None;
        }
        Some((libm::floor((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1))
    }
}

pub const AMPLITUDE_BINS: usize = 30;
pub const ANGLE_BINS: usize = 36;

/// The three saccade histograms: amplitude over `[0, max_amplitude]` and the
/// two angles over `[-180, 180]` in 10° bins.
pub fn stats_histograms(stats: &ScanpathStats, max_amplitude: f64) -> Result<(Histogram, Histogram, Histogram)> {
    Ok((
        Histogram::new(&stats.amplitudes, 0.0, max_amplitude, AMPLITUDE_BINS)?,
        Histogram::new(&stats.directions, -180.0, 180.0, ANGLE_BINS)?,
        Histogram::new(&stats.turn_angles, -180.0, 180.0, ANGLE_BINS)?,
    ))
}

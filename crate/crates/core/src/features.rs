//! Per-image patch-feature grids used as the conditioning signal.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Default model-side grid resolution.
pub const DEFAULT_GRID: usize = 32;

/// An `height × width × depth` grid of features, row-major with depth fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub values: Vec<f32>,
    pub stimulus_id: String,
}

impl FeatureGrid {
    pub fn new(
        stimulus_id: impl Into<String>,
        height: usize,
        width: usize,
        depth: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if values.len() != height * width * depth {
            return Err(Error::shape("feature grid", &[height, width, depth], &[values.len()]));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("feature grid cell {}", i / depth.max(1)),
            });
        }
        Ok(FeatureGrid {
            height,
            width,
            depth,
            values,
            stimulus_id: stimulus_id.into(),
        })
    }

    pub fn zeros(stimulus_id: impl Into<String>, height: usize, width: usize, depth: usize) -> Self {
        FeatureGrid {
            height,
            width,
            depth,
            values: vec![0.0; height * width * depth],
            stimulus_id: stimulus_id.into(),
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.depth;
        &self.values[start..start + self.depth]
    }

    /// Zero mean and unit variance over every value in the grid. A constant
    /// grid becomes all zeros.
    pub fn standardize(&mut self) {
        if self.values.is_empty() {
            return;
        }
        let n = self.values.len() as f64;
        let mean = self.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self
            .values
            .iter()
            .map(|&v| (v as f64 - mean) * (v as f64 - mean))
            .sum::<f64>()
            / n;
        let scale = if var > 0.0 { 1.0 / libm::sqrt(var) } else { 0.0 };
        for v in &mut self.values {
            *v = ((*v as f64 - mean) * scale) as f32;
        }
    }

    pub fn standardized(mut self) -> Self {
        self.standardize();
        self
    }

    /// Bilinear, corner-aligned resampling of every channel.
    pub fn resample(&self, target: (usize, usize)) -> Result<FeatureGrid> {
        if target.0 == 0 || target.1 == 0 {
            return Err(Error::Config(format!(
                "resample target {target:?} must be at least 1x1"
            )));
        }
        let values = resample_bilinear(&self.values, (self.height, self.width, self.depth), target);
        Ok(FeatureGrid {
            height: target.0,
            width: target.1,
            depth: self.depth,
            values,
            stimulus_id: self.stimulus_id.clone(),
        })
    }

    /// Channel means over all cells, the grid's global descriptor.
    pub fn global_mean(&self) -> Vec<f32> {
        let mut mean = vec![0.0f64; self.depth];
        for cell in self.values.chunks(self.depth.max(1)) {
            for (m, &v) in mean.iter_mut().zip(cell) {
                *m += v as f64;
            }
        }
        let n = self.cells().max(1) as f64;
        mean.into_iter().map(|m| (m / n) as f32).collect()
    }

    /// Cells flattened to a `[cells, depth]` tensor.
    pub fn tokens<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            &[self.cells(), self.depth],
            self.values.iter().map(|&v| T::from_f32(v).unwrap()).collect(),
        )
        .expect("grid invariant")
    }
}

/// Source coordinate of output index `i` under corner alignment.
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    if dst <= 1 {
        (src as f64 - 1.0) / 2.0
    } else {
        i as f64 * (src as f64 - 1.0) / (dst as f64 - 1.0)
    }
}

/// Bilinear corner-aligned resampling of a row-major `h × w × d` array.
pub fn resample_bilinear<T: Scalar>(
    values: &[T],
    (h, w, d): (usize, usize, usize),
    (th, tw): (usize, usize),
) -> Vec<T> {
    let mut out = Vec::with_capacity(th * tw * d);
    for r in 0..th {
        let y = source_coord(r, h, th);
        let y0 = (libm::floor(y) as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = T::from_f64_lossy(y - y0 as f64);
        for c in 0..tw {
            let x = source_coord(c, w, tw);
            let x0 = (libm::floor(x) as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = T::from_f64_lossy(x - x0 as f64);
            let at = |yy: usize, xx: usize, k: usize| values[(yy * w + xx) * d + k];
            for k in 0..d {
                let top = at(y0, x0, k) + (at(y0, x1, k) - at(y0, x0, k)) * fx;
                let bottom = at(y1, x0, k) + (at(y1, x1, k) - at(y1, x0, k)) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    out
}

/// A Gaussian bump in relative `[0, 1]²` coordinates (x right, y down).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
}

/// Relative position of cell `i` along an axis of `n` cells, corner aligned.
pub fn cell_position(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Deterministic test features: blob `j` writes the unit vector `e_j` scaled
/// by its spatial Gaussian. Signatures are orthogonal, so projecting a cell
/// onto `e_j` recovers blob `j`'s Gaussian alone.
pub fn synth_grid(stimulus_id: impl Into<String>, blobs: &[Blob], dims: (usize, usize, usize)) -> Result<FeatureGrid> {
    let (h, w, d) = dims;
    if blobs.len() > d {
        return Err(Error::Capacity {
            blobs: blobs.len(),
            depth: d,
        });
    }
    for b in blobs {
        if !(0.0..=1.0).contains(&b.cx) || !(0.0..=1.0).contains(&b.cy) || !(b.sigma > 0.0) {
            return Err(Error::Config(format!("blob {b:?} outside the unit square")));
        }
    }
    let mut grid = FeatureGrid::zeros(stimulus_id, h, w, d);
    for r in 0..h {
        let y = cell_position(r, h);
        for c in 0..w {
            let x = cell_position(c, w);
            let base = (r * w + c) * d;
            for (j, b) in blobs.iter().enumerate() {
                let dist2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
                grid.values[base + j] = libm::exp(-dist2 / (2.0 * b.sigma * b.sigma)) as f32;
            }
        }
    }
    Ok(grid)
}

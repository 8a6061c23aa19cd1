//! Sinusoidal encodings: the 2D positional grid shared by gaze samples and
//! image patches, and the 1D diffusion-timestep encoding.

use alloc::vec::Vec;

use crate::features::resample_bilinear;
use crate::tensor::{Scalar, Tensor};

/// `[sin block | cos block]` encoding of `pos` into `out` (even length).
fn encode(pos: f64, out: &mut [f32]) {
    let half = out.len() / 2;
    for i in 0..half {
        let freq = libm::pow(10000.0, -(i as f64) / half as f64);
        out[i] = libm::sin(pos * freq) as f32;
        out[half + i] = libm::cos(pos * freq) as f32;
    }
}

/// Positional grid over a `height × width` frame. The first `dim / 2`
/// channels encode the row, the rest the column.
#[derive(Debug, Clone, PartialEq)]
pub struct CpeGrid {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    values: Vec<f32>,
}

impl CpeGrid {
    /// `dim` must be a multiple of 4.
    pub fn new(height: usize, width: usize, dim: usize) -> Self {
        assert!(
            dim.is_multiple_of(4) && height > 0 && width > 0,
            "cpe grid {height}x{width}x{dim}"
        );
        let half = dim / 2;
        let mut y_codes = alloc::vec![0.0f32; height * half];
        let mut x_codes = alloc::vec![0.0f32; width * half];
        for (r, code) in y_codes.chunks_mut(half).enumerate() {
            encode(r as f64, code);
        }
        for (c, code) in x_codes.chunks_mut(half).enumerate() {
            encode(c as f64, code);
        }
        let mut values = Vec::with_capacity(height * width * dim);
        for r in 0..height {
            for c in 0..width {
                values.extend_from_slice(&y_codes[r * half..(r + 1) * half]);
                values.extend_from_slice(&x_codes[c * half..(c + 1) * half]);
            }
        }
        CpeGrid {
            height,
            width,
            dim,
            values,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Nearest grid pixel of a model-space coordinate, clamped to the frame.
    pub fn pixel(&self, coord: [f64; 2]) -> (usize, usize) {
        let index = |v: f64, n: usize| {
            let p = libm::round((v + 1.0) * 0.5 * (n - 1) as f64);
            if p.is_nan() {
                0
            } else {
                p.clamp(0.0, (n - 1) as f64) as usize
            }
        };
        (index(coord[1], self.height), index(coord[0], self.width))
    }

    /// Embeddings of `[.., 2]` coordinates (x, y), giving `[.., dim]`.
    pub fn lookup<T: Scalar>(&self, coords: &Tensor<T>) -> Tensor<T> {
        let n = coords.numel() / 2;
        let mut shape = coords.shape().to_vec();
        *shape.last_mut().unwrap() = self.dim;
        let mut out = Vec::with_capacity(n * self.dim);
        for p in coords.data().chunks(2) {
            let (r, c) = self.pixel([p[0].as_f64(), p[1].as_f64()]);
            out.extend(self.at(r, c).iter().map(|&v| T::from_f32(v).unwrap()));
        }
        Tensor::new(&shape, out).expect("lookup shape")
    }

    /// The grid bilinearly resampled to `(rows, cols)`, as `[rows * cols, dim]`.
    pub fn resampled<T: Scalar>(&self, (rows, cols): (usize, usize)) -> Tensor<T> {
        let src: Vec<f64> = self.values.iter().map(|&v| v as f64).collect();
        let out = resample_bilinear(&src, (self.height, self.width, self.dim), (rows, cols));
        Tensor::new(
            &[rows * cols, self.dim],
            out.into_iter().map(T::from_f64_lossy).collect(),
        )
        .expect("resample shape")
    }
}

/// Sinusoidal encodings of diffusion step indices, `[steps.len(), dim]`.
pub fn timestep_encoding<T: Scalar>(steps: &[usize], dim: usize) -> Tensor<T> {
    let mut out = Vec::with_capacity(steps.len() * dim);
    let mut code = alloc::vec![0.0f32; dim];
    for &t in steps {
        encode(t as f64, &mut code);
        out.extend(code.iter().map(|&v| T::from_f32(v).unwrap()));
    }
    Tensor::new(&[steps.len(), dim], out).expect("encoding shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_sin_zero_cos_one() {
        let g = CpeGrid::new(224, 224, 16);
        let p = g.at(0, 0);
        for i in 0..4 {
            assert_eq!(p[i], 0.0);
            assert_eq!(p[4 + i], 1.0);
            assert_eq!(p[8 + i], 0.0);
            assert_eq!(p[12 + i], 1.0);
        }
        let t: Tensor<f64> = timestep_encoding(&[0], 8);
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn recomputation_is_bit_identical() {
        assert_eq!(CpeGrid::new(30, 20, 8), CpeGrid::new(30, 20, 8));
    }

    #[test]
    fn lookup_clamps_far_coordinates() {
        let g = CpeGrid::new(224, 224, 8);
        let coords = Tensor::new(&[3, 2], alloc::vec![-5.0f64, -5.0, -1.0, -1.0, 1.0, 1.0]).unwrap();
        let e = g.lookup(&coords);
        assert_eq!(e.data()[..8], e.data()[8..16]);
        assert_eq!(g.pixel([1.0, 1.0]), (223, 223));
        assert_eq!(g.pixel([-1.0, 1.0]), (223, 0));
    }

    #[test]
    fn rows_and_columns_use_separate_halves() {
        let g = CpeGrid::new(10, 10, 8);
        assert_eq!(g.at(3, 0)[4..], g.at(0, 0)[4..]);
        assert_eq!(g.at(3, 0)[..4], g.at(3, 9)[..4]);
        assert_ne!(g.at(3, 0)[..4], g.at(4, 0)[..4]);
        assert_eq!(g.at(0, 5)[4..], g.at(8, 5)[4..]);
    }
}

//! Diffusion over continuous eye-movement trajectories, conditioned on image
//! patch-feature grids, plus the event extraction and evaluation chain that
//! turns generated trajectories into scanpaths, saliency maps and scores.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! command line and anything touching the filesystem live in the `gazediff`
//! companion crate.

#![no_std]
#![deny(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

mod error;

pub mod autodiff;
pub mod denoiser;
pub mod diffusion;
pub mod events;
pub mod features;
pub mod gaze;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

//! Core of a desk-scale ray origin/endpoint diffusion pipeline for
//! sparse-view structure from motion.
//!
//! Every view of a scene is described by a per-pixel grid of ray origins
//! (the camera center) and ray endpoints (the observed surface point), both
//! stored as unit-norm homogeneous 4-vectors. A small multi-view transformer
//! is trained to denoise these grids; cameras are recovered from predicted
//! rays and scored with the usual pose and geometry metrics.
//!
//! The crate is `no_std` (with `alloc`). File formats, the command line and
//! multi-threaded training live in the `raysfm` companion crate.

#![no_std]
// std float methods shadow the libm ones when the test harness links std

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod denoiser;
pub mod diffusion;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod real;
pub mod synthdata;

pub use real::Real;

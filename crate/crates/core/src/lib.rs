//! Partially coherent lithography simulation and complex neural-field kernel
//! regression.
//!
//! The [`optics`] module is the ground-truth imaging model (source, pupil,
//! TCC, SOCS and Abbe). [`neural_field`] and [`trainer`] learn a truncated
//! kernel stack from mask/aerial pairs; once exported, prediction is a plain
//! FFT convolution with the stack.

pub mod datagen;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod neural_field;
pub mod optics;
pub mod trainer;

pub use error::{LithoError, Result};
pub use grid::{
    center_crop, center_embed, fft2_centered, fftshift, ifft2_centered, ifftshift, magnitude_sq,
    ComplexGrid, RealGrid,
};
pub use kernels::{KernelMeta, KernelStack, Provenance};

//! Numerical core of the DAS traffic toolkit.
//!
//! Everything in this crate is a pure function of its inputs and only needs
//! `alloc`: the physical impulse-response model of a buried fiber, synthetic
//! waterfall generation, frequency-domain convolution, the LASSO baseline
//! denoiser, the hybrid U-Net + LSTM denoiser with hand-written reverse-mode
//! gradients, line-by-line vehicle tracking, and MSE/PSNR/SSIM scoring.
//!
//! File formats, configuration parsing and the command line live in the
//! `das-toolkit` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod hdlnet;
pub mod lasso;
pub mod metrics;
pub mod physics;
pub mod scenegen;
pub mod spectral;
pub mod tracker;
mod waterfall;

pub use error::{Error, Result};
pub use physics::{ImpulseKernel, KernelForm, PhysicsParams, VehicleGeometry};
pub use waterfall::Waterfall;

//! Desk-scale single-image super-resolution toolkit.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: dense tensors, a tape-based reverse-mode autodiff engine and Adam.
//! * [`imaging`]: PNG I/O, bicubic resampling, Sobel/Gaussian filters, PSNR and SSIM.
//! * [`data`]: degradation synthesis, augmented patch sampling and flat-region
//!   noise estimation.
//! * [`models`]: EDSR-style baseline, residual denoiser, the denoise-then-upscale
//!   composites and the multiscale pyramid network, plus checkpoints.
//! * [`train`]: losses, training loops, staged pyramid training, self-ensembling
//!   and evaluation reports.

pub mod data;
pub mod imaging;
pub mod models;
pub mod tensor;
pub mod train;

pub use tensor::{Element, Tensor, TensorError};

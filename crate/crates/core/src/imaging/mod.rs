//! RGB rasters, PNG I/O, resampling, derivative filters and quality metrics.

mod filters;
mod io;
mod metrics;
mod resample;

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use filters::{gaussian_blur, sobel, sobel_on_tape};
pub use io::{load_image, save_image};
pub use metrics::{psnr, psnr_with, ssim, ssim_with, MetricOptions, SSIM_SIGMA, SSIM_WINDOW};
pub use resample::{bicubic_resample, cubic_weight, resize_bicubic, CUBIC_A};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported bit depth {bits} in {path} (only 8-bit PNG is supported)")]
    UnsupportedBitDepth { path: PathBuf, bits: u8 },
    #[error("malformed PNG stream in {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("invalid pixel buffer: {0}")]
    InvalidBuffer(String),
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// 8-bit RGB raster stored row-major as `RGBRGB…`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub source_path: Option<PathBuf>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidBuffer(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(ImageError::InvalidBuffer(format!(
                "{} bytes for a {width}x{height} RGB image (expected {})",
                pixels.len(),
                width * height * 3
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            source_path: None,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels).expect("valid fill")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// `1×3×H×W` tensor of values in `[0, 255]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let plane = self.width * self.height;
        let mut data = vec![0.0f32; plane * 3];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = f32::from(px[c]);
            }
        }
        Tensor::from_vec(vec![1, 3, self.height, self.width], data).expect("image tensor shape")
    }

    /// Inverse of [`ImageBuffer::to_tensor`]: rounds half up and clamps to `[0, 255]`.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self, ImageError> {
        let [n, c, h, w] = t.dims4()?;
        if n != 1 || c != 3 {
            return Err(ImageError::InvalidBuffer(format!(
                "expected a 1x3xHxW tensor, got {:?}",
                t.shape()
            )));
        }
        let plane = h * w;
        let data = t.data();
        let mut pixels = vec![0u8; plane * 3];
        for i in 0..plane {
            for ch in 0..3 {
                pixels[i * 3 + ch] = quantize(data[ch * plane + i]);
            }
        }
        Self::new(w, h, pixels)
    }

    /// Copies out a rectangular region.
    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Result<Self, ImageError> {
        if left + width > self.width || top + height > self.height || width == 0 || height == 0 {
            return Err(ImageError::InvalidBuffer(format!(
                "crop {width}x{height}+{left}+{top} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in top..top + height {
            let start = (y * self.width + left) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + width * 3]);
        }
        Self::new(width, height, pixels)
    }
}

/// Round half up, clamp to the 8-bit range. NaN maps to 0.
pub fn quantize(v: f32) -> u8 {
    let r = (v + 0.5).floor();
    if r >= 255.0 {
        255
    } else if r > 0.0 {
        r as u8
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_is_identity() {
        let pixels: Vec<u8> = (0..5 * 4 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let img = ImageBuffer::new(5, 4, pixels).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 4, 5]);
        assert_eq!(ImageBuffer::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn quantize_rounds_half_up_and_clamps() {
        assert_eq!(quantize(0.5), 1);
        assert_eq!(quantize(1.49), 1);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
        assert_eq!(quantize(254.5), 255);
        assert_eq!(quantize(f32::NAN), 0);
    }

    #[test]
    fn buffer_length_is_checked() {
        assert!(ImageBuffer::new(2, 2, vec![0; 11]).is_err());
    }
}

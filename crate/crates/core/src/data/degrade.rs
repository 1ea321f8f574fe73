use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::imaging::{gaussian_blur, quantize, resize_bicubic, ImageBuffer};
use crate::tensor::Tensor;

use super::DataError;

/// Generative stand-in for an unknown degradation: blur, bicubic downsample,
/// then additive Gaussian noise on the 0-255 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub scale: usize,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            scale: 2,
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if ![2, 4, 8].contains(&self.scale) {
            return Err(DataError::Config(format!("scale must be 2, 4 or 8, got {}", self.scale)));
        }
        if !(self.blur_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(DataError::Config(format!(
                "sigmas must be non-negative (blur {}, noise {})",
                self.blur_sigma, self.noise_sigma
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Crops `hr` to the largest region divisible by `scale`.
pub(crate) fn crop_divisible(hr: &ImageBuffer, scale: usize) -> Result<ImageBuffer, DataError> {
    let (w, h) = (hr.width(), hr.height());
    if w < scale || h < scale {
        return Err(DataError::TooSmall {
            width: w,
            height: h,
            scale,
        });
    }
    let (cw, ch) = (w - w % scale, h - h % scale);
    if (cw, ch) == (w, h) {
        Ok(hr.clone())
    } else {
        Ok(hr.crop(0, 0, cw, ch)?)
    }
}

/// Degrades an HR image into its LR counterpart. Deterministic in `spec.seed`.
pub fn make_lr(hr: &ImageBuffer, spec: &DegradationSpec) -> Result<ImageBuffer, DataError> {
    spec.validate()?;
    let hr = crop_divisible(hr, spec.scale)?;
    let t: Tensor<f64> = hr.to_tensor().cast();
    let blurred = gaussian_blur(&t, spec.blur_sigma)?;
    let down = resize_bicubic(&blurred, hr.height() / spec.scale, hr.width() / spec.scale)?;
    let mut values = down.into_vec();
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| DataError::Config(e.to_string()))?;
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let (w, h) = (hr.width() / spec.scale, hr.height() / spec.scale);
    let plane = w * h;
    let mut pixels = vec![0u8; plane * 3];
    for c in 0..3 {
        for i in 0..plane {
            pixels[i * 3 + c] = quantize(values[c * plane + i] as f32);
        }
    }
    Ok(ImageBuffer::new(w, h, pixels)?)
}

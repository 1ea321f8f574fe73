use std::fmt::Write as _;

use crate::imaging::{resize_bicubic, ImageBuffer};
use crate::tensor::Tensor;

use super::{DataError, ImagePair};

/// Side of the non-overlapping LR windows tested for flatness.
pub const FLAT_WINDOW: usize = 8;
pub const HISTOGRAM_BINS: usize = 256;
const HIST_LO: f64 = -256.0;
const HIST_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    /// Standard deviation of the residual inside each accepted window.
    pub region_stds: Vec<f64>,
    pub pooled_std: f64,
    pub mean: f64,
    pub samples: usize,
    /// Counts over `[-256, 256)` in bins of width 2.
    pub histogram: Vec<u64>,
}

impl NoiseReport {
    pub fn bin_center(i: usize) -> f64 {
        HIST_LO + HIST_WIDTH * (i as f64 + 0.5)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# pooled_std={}\nbin_center,count\n", self.pooled_std);
        for (i, count) in self.histogram.iter().enumerate() {
            let _ = writeln!(out, "{},{}", Self::bin_center(i), count);
        }
        out
    }
}

/// Residual statistics of `LR − bicubic↓(HR)` over windows where the downscaled
/// HR is nearly constant in every channel (variance strictly below `flat_threshold`).
pub fn estimate_noise(pairs: &[ImagePair], scale: usize, flat_threshold: f64) -> Result<NoiseReport, DataError> {
    let mut residuals = Vec::new();
    let mut region_stds = Vec::new();
    for pair in pairs {
        let (hr, lr) = (&pair.hr, &pair.lr);
        if (hr.width(), hr.height()) != (lr.width() * scale, lr.height() * scale) {
            return Err(DataError::Misaligned {
                name: pair.name.clone(),
                hr_w: hr.width(),
                hr_h: hr.height(),
                lr_w: lr.width(),
                lr_h: lr.height(),
                scale,
            });
        }
        collect_flat(hr, lr, flat_threshold, &mut residuals, &mut region_stds)?;
    }
    if residuals.is_empty() {
        return Err(DataError::InsufficientFlatArea {
            threshold: flat_threshold,
        });
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let pooled_std = (residuals.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    for d in &residuals {
        let bin = ((d - HIST_LO) / HIST_WIDTH).floor().clamp(0.0, (HISTOGRAM_BINS - 1) as f64) as usize;
        histogram[bin] += 1;
    }
    Ok(NoiseReport {
        region_stds,
        pooled_std,
        mean,
        samples: residuals.len(),
        histogram,
    })
}

fn collect_flat(
    hr: &ImageBuffer,
    lr: &ImageBuffer,
    threshold: f64,
    residuals: &mut Vec<f64>,
    region_stds: &mut Vec<f64>,
) -> Result<(), DataError> {
    let (w, h) = (lr.width(), lr.height());
    let down: Tensor<f64> = resize_bicubic(&hr.to_tensor().cast::<f64>(), h, w)?;
    let plane = w * h;
    let reference = down.data();
    let noisy: Vec<f64> = lr.to_tensor().data().iter().map(|&v| f64::from(v)).collect();
    let win = FLAT_WINDOW;
    for ty in 0..h / win {
        for tx in 0..w / win {
            let idx = |c: usize, y: usize, x: usize| c * plane + (ty * win + y) * w + tx * win + x;
            let flat = (0..3).all(|c| {
                let vals = (0..win * win).map(|i| reference[idx(c, i / win, i % win)]);
                let m = vals.clone().sum::<f64>() / (win * win) as f64;
                let var = vals.map(|v| (v - m).powi(2)).sum::<f64>() / (win * win) as f64;
                var < threshold
            });
            if !flat {
                continue;
            }
            let start = residuals.len();
            for c in 0..3 {
                for i in 0..win * win {
                    let k = idx(c, i / win, i % win);
                    residuals.push(noisy[k] - reference[k]);
                }
            }
            let region = &residuals[start..];
            let m = region.iter().sum::<f64>() / region.len() as f64;
            region_stds.push((region.iter().map(|d| (d - m).powi(2)).sum::<f64>() / region.len() as f64).sqrt());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_lr, synthetic_image, DegradationSpec};

    fn noisy_set(sigma: f64) -> Vec<ImagePair> {
        (0..3)
            .map(|i| {
                let hr = synthetic_image(100 + i, 128, 128);
                let spec = DegradationSpec {
                    noise_sigma: sigma,
                    seed: 40 + i,
                    ..Default::default()
                };
                let lr = make_lr(&hr, &spec).unwrap();
                ImagePair {
                    name: format!("{i}"),
                    hr,
                    lr,
                }
            })
            .collect()
    }

    #[test]
    fn histogram_bins_and_csv() {
        assert_eq!(NoiseReport::bin_center(0), -255.0);
        assert_eq!(NoiseReport::bin_center(128), 1.0);
        let report = estimate_noise(&noisy_set(0.0), 2, 1.0).unwrap();
        assert!(report.pooled_std <= 0.8, "{}", report.pooled_std);
        assert_eq!(report.histogram.iter().sum::<u64>() as usize, report.samples);
        let csv = report.to_csv();
        assert!(csv.starts_with("# pooled_std="));
        assert_eq!(csv.lines().count(), 2 + HISTOGRAM_BINS);
    }

    #[test]
    fn recovers_injected_sigma() {
        let report = estimate_noise(&noisy_set(10.0), 2, 1.0).unwrap();
        assert!((report.pooled_std - 10.0).abs() <= 1.0, "{}", report.pooled_std);
        let report = estimate_noise(&noisy_set(25.0), 2, 1.0).unwrap();
        assert!(report.mean.abs() < 1.0, "{}", report.mean);
    }

    #[test]
    fn monotone_in_sigma() {
        let stds: Vec<f64> = [0.0, 5.0, 10.0, 25.0]
            .iter()
            .map(|&s| estimate_noise(&noisy_set(s), 2, 1.0).unwrap().pooled_std)
            .collect();
        assert!(stds.windows(2).all(|w| w[0] <= w[1]), "{stds:?}");
    }

    #[test]
    fn zero_threshold_has_no_flat_area() {
        let err = estimate_noise(&noisy_set(0.0), 2, 0.0).unwrap_err();
        assert!(err.to_string().contains("insufficient flat area"));
        assert!(err.to_string().contains('0'));
    }
}

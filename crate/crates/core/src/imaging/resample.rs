//! Separable cubic-convolution resampling.
//!
//! Sample centres are aligned (`src = (dst + 0.5) / scale − 0.5`), out-of-range
//! taps replicate the edge pixel, and on downscale the kernel is stretched by
//! the inverse scale so it also acts as the antialiasing filter.

use crate::tensor::{Element, Tensor};

use super::ImageError;

/// Cubic-convolution parameter.
pub const CUBIC_A: f64 = -0.5;

/// Keys' cubic convolution kernel.
pub fn cubic_weight(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

struct Taps {
    indices: Vec<usize>,
    weights: Vec<f64>,
    reference: usize,
}

impl Taps {
    /// `ref + Σ w·(x − ref)`: identical to `Σ w·x` for normalized weights, but
    /// exact on constant input.
    fn apply(&self, line: &[f64]) -> f64 {
        let r = line[self.reference];
        r + self
            .indices
            .iter()
            .zip(&self.weights)
            .map(|(&i, &w)| w * (line[i] - r))
            .sum::<f64>()
    }
}

fn axis_taps(in_len: usize, out_len: usize, a: f64) -> Vec<Taps> {
    let scale = out_len as f64 / in_len as f64;
    let shrink = scale.min(1.0);
    let support = 2.0 / shrink;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).ceil() as isize;
            let hi = (center + support).floor() as isize;
            let mut indices = Vec::new();
            let mut weights = Vec::new();
            for j in lo..=hi {
                let w = cubic_weight((center - j as f64) * shrink, a);
                if w != 0.0 {
                    indices.push(j.clamp(0, in_len as isize - 1) as usize);
                    weights.push(w);
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            let reference = center.round().clamp(0.0, (in_len - 1) as f64) as usize;
            Taps {
                indices,
                weights,
                reference,
            }
        })
        .collect()
}

/// Resizes every plane of an `N×C×H×W` tensor to `out_h × out_w`.
pub fn resize_bicubic<T: Element>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>, ImageError> {
    let [n, c, h, w] = t.dims4()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(ImageError::InvalidBuffer(format!(
            "cannot resize {h}x{w} to {out_h}x{out_w}"
        )));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(t.clone());
    }
    let col_taps = axis_taps(w, out_w, CUBIC_A);
    let row_taps = axis_taps(h, out_h, CUBIC_A);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    let mut horiz = vec![0.0f64; h * out_w];
    let mut line = vec![0.0f64; w.max(h)];
    for plane in t.data().chunks_exact(h * w) {
        for y in 0..h {
            for (dst, &src) in line.iter_mut().zip(&plane[y * w..(y + 1) * w]) {
                *dst = src.as_f64();
            }
            for (x, taps) in col_taps.iter().enumerate() {
                horiz[y * out_w + x] = taps.apply(&line[..w]);
            }
        }
        let mut block = vec![T::zero(); out_h * out_w];
        for x in 0..out_w {
            for y in 0..h {
                line[y] = horiz[y * out_w + x];
            }
            for (y, taps) in row_taps.iter().enumerate() {
                block[y * out_w + x] = T::from_f64_lossy(taps.apply(&line[..h]));
            }
        }
        out.extend(block);
    }
    Ok(Tensor::from_vec(vec![n, c, out_h, out_w], out)?)
}

/// Resamples by `scale`; output extent is `round(extent · scale)`.
pub fn bicubic_resample<T: Element>(t: &Tensor<T>, scale: f64) -> Result<Tensor<T>, ImageError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(ImageError::InvalidScale(scale));
    }
    let [_, _, h, w] = t.dims4()?;
    let out_h = (h as f64 * scale).round() as usize;
    let out_w = (w as f64 * scale).round() as usize;
    if out_h == 0 || out_w == 0 {
        return Err(ImageError::InvalidScale(scale));
    }
    resize_bicubic(t, out_h, out_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor<f64> {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Tensor::from_vec(vec![1, 1, h, w], data).unwrap()
    }

    #[test]
    fn kernel_partition_of_unity() {
        for frac in [0.0, 0.1, 0.25, 0.5, 0.9] {
            let s: f64 = (-2..=2).map(|j| cubic_weight(frac - j as f64, CUBIC_A)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_are_preserved_exactly() {
        let t = Tensor::<f32>::full(vec![1, 3, 9, 7], 137.25);
        for scale in [0.5, 0.25, 2.0, 3.0, 1.7] {
            let out = bicubic_resample(&t, scale).unwrap();
            assert!(out.data().iter().all(|&v| v == 137.25), "scale {scale}");
        }
    }

    #[test]
    fn unit_scale_is_identity() {
        let t = plane(6, 5, |y, x| (y * 5 + x) as f64 * 1.5);
        let out = bicubic_resample(&t, 1.0).unwrap();
        assert!(out.max_abs_diff(&t).unwrap() <= 1e-6);
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        let t = plane(4, 4, |_, _| 0.0);
        assert!(matches!(bicubic_resample(&t, 0.0), Err(ImageError::InvalidScale(_))));
        assert!(matches!(bicubic_resample(&t, -2.0), Err(ImageError::InvalidScale(_))));
    }

    #[test]
    fn downscale_output_dims() {
        let t = plane(16, 12, |y, x| (x + y) as f64);
        let out = bicubic_resample(&t, 0.25).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4, 3]);
    }
}

//! PSNR and SSIM over 8-bit RGB.

use super::{ImageBuffer, ImageError};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const MAX_VALUE: f64 = 255.0;
const C1: f64 = (0.01 * MAX_VALUE) * (0.01 * MAX_VALUE);
const C2: f64 = (0.03 * MAX_VALUE) * (0.03 * MAX_VALUE);

/// Metric configuration. `crop_border` trims that many pixels from every side first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricOptions {
    pub crop_border: usize,
}

fn prepare<'a>(
    a: &'a ImageBuffer,
    b: &'a ImageBuffer,
    opts: MetricOptions,
) -> Result<(std::borrow::Cow<'a, ImageBuffer>, std::borrow::Cow<'a, ImageBuffer>), ImageError> {
    use std::borrow::Cow;
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(ImageError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let s = opts.crop_border;
    if s == 0 {
        return Ok((Cow::Borrowed(a), Cow::Borrowed(b)));
    }
    if 2 * s >= a.width() || 2 * s >= a.height() {
        return Err(ImageError::InvalidBuffer(format!(
            "border crop {s} leaves nothing of a {}x{} image",
            a.width(),
            a.height()
        )));
    }
    let (w, h) = (a.width() - 2 * s, a.height() - 2 * s);
    Ok((Cow::Owned(a.crop(s, s, w, h)?), Cow::Owned(b.crop(s, s, w, h)?)))
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImageError> {
    psnr_with(a, b, MetricOptions::default())
}

/// `10·log10(255² / MSE)` over all channels; `+∞` for identical images.
pub fn psnr_with(a: &ImageBuffer, b: &ImageBuffer, opts: MetricOptions) -> Result<f64, ImageError> {
    let (a, b) = prepare(a, b, opts)?;
    let sse: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = i64::from(x) - i64::from(y);
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.pixels().len() as f64;
    Ok(10.0 * (MAX_VALUE * MAX_VALUE / mse).log10())
}

pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImageError> {
    ssim_with(a, b, MetricOptions::default())
}

/// Mean SSIM over an 11×11 Gaussian window (σ = 1.5, valid positions only),
/// computed per channel and averaged.
pub fn ssim_with(a: &ImageBuffer, b: &ImageBuffer, opts: MetricOptions) -> Result<f64, ImageError> {
    let (a, b) = prepare(a, b, opts)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(ImageError::TooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let window = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.pixels().iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = b.pixels().iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect();
        total += channel_ssim(&x, &y, w, h, &window);
    }
    Ok(total / 3.0)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable 'valid' filtering with the 1-D window.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().enumerate().map(|(i, &wt)| wt * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(i, &wt)| wt * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn channel_ssim(x: &[f64], y: &[f64], w: usize, h: usize, g: &[f64]) -> f64 {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, w, h, g);
    let my = filter_valid(y, w, h, g);
    let sxx = filter_valid(&xx, w, h, g);
    let syy = filter_valid(&yy, w, h, g);
    let sxy = filter_valid(&xy, w, h, g);
    let n = mx.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mxy = mx[i] * my[i];
        let vx = sxx[i] - mx[i] * mx[i];
        let vy = syy[i] - my[i] * my[i];
        let cov = sxy[i] - mxy;
        let num = (2.0 * mxy + C1) * (2.0 * cov + C2);
        let den = (mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2);
        acc += num / den;
    }
    acc / n as f64
}

use rand::Rng;

use crate::imaging::ImageBuffer;
use crate::tensor::Tensor;

use super::{ChannelPerm, DataError, Dihedral};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    /// LR patch side in pixels; the HR patch is `lr_patch * scale`.
    pub lr_patch: usize,
    pub scale: usize,
    pub augment_flips: bool,
    pub augment_rot90: bool,
    pub augment_rgb_shuffle: bool,
    pub per_image_mean_shift: bool,
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            lr_patch: 48,
            scale: 2,
            augment_flips: true,
            augment_rot90: true,
            augment_rgb_shuffle: false,
            per_image_mean_shift: false,
            seed: 0,
        }
    }
}

/// What was done to produce a patch, so it can be undone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedTransform {
    pub lr_left: usize,
    pub lr_top: usize,
    pub dihedral: Dihedral,
    pub perm: ChannelPerm,
    /// Per-channel means subtracted from the (transformed) patches.
    pub lr_mean: Option<[f32; 3]>,
    pub hr_mean: Option<[f32; 3]>,
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub hr: Tensor<f32>,
    pub lr: Tensor<f32>,
    pub transform: AppliedTransform,
}

/// Per-channel means of a `1×3×H×W` tensor, and the tensor with them removed.
pub(crate) fn subtract_channel_means(t: &Tensor<f32>) -> (Tensor<f32>, [f32; 3]) {
    let plane = t.numel() / 3;
    let mut means = [0.0f32; 3];
    let mut data = t.data().to_vec();
    for (c, chunk) in data.chunks_exact_mut(plane).enumerate() {
        let m = chunk.iter().map(|&v| f64::from(v)).sum::<f64>() / plane as f64;
        means[c] = m as f32;
        chunk.iter_mut().for_each(|v| *v = (f64::from(*v) - m) as f32);
    }
    (Tensor::from_vec(t.shape().to_vec(), data).expect("same shape"), means)
}

/// Draws an aligned random crop and applies the same augmentation to both sides.
pub fn sample_patch<R: Rng + ?Sized>(
    hr: &ImageBuffer,
    lr: &ImageBuffer,
    cfg: &PatchConfig,
    rng: &mut R,
) -> Result<Patch, DataError> {
    let s = cfg.scale;
    if (hr.width(), hr.height()) != (lr.width() * s, lr.height() * s) {
        return Err(DataError::Misaligned {
            name: lr
                .source_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            hr_w: hr.width(),
            hr_h: hr.height(),
            lr_w: lr.width(),
            lr_h: lr.height(),
            scale: s,
        });
    }
    let p = cfg.lr_patch;
    if p == 0 || p > lr.width() || p > lr.height() {
        return Err(DataError::PatchTooLarge {
            patch: p,
            width: lr.width(),
            height: lr.height(),
        });
    }
    let lr_left = rng.random_range(0..=lr.width() - p);
    let lr_top = rng.random_range(0..=lr.height() - p);
    let dihedral = match (cfg.augment_flips, cfg.augment_rot90) {
        (true, true) => Dihedral::all()[rng.random_range(0..8)],
        (true, false) => Dihedral::flips()[rng.random_range(0..4)],
        (false, true) => Dihedral {
            rot90: rng.random_range(0..4),
            flip: false,
        },
        (false, false) => Dihedral::IDENTITY,
    };
    let perm = if cfg.augment_rgb_shuffle {
        ChannelPerm::all()[rng.random_range(0..6)]
    } else {
        ChannelPerm::IDENTITY
    };

    let lr_crop = lr.crop(lr_left, lr_top, p, p)?.to_tensor();
    let hr_crop = hr.crop(lr_left * s, lr_top * s, p * s, p * s)?.to_tensor();
    let mut lr_t = perm.apply(&dihedral.apply(&lr_crop)?)?;
    let mut hr_t = perm.apply(&dihedral.apply(&hr_crop)?)?;
    let (mut lr_mean, mut hr_mean) = (None, None);
    if cfg.per_image_mean_shift {
        let (l, lm) = subtract_channel_means(&lr_t);
        let (h, hm) = subtract_channel_means(&hr_t);
        lr_t = l;
        hr_t = h;
        lr_mean = Some(lm);
        hr_mean = Some(hm);
    }
    Ok(Patch {
        hr: hr_t,
        lr: lr_t,
        transform: AppliedTransform {
            lr_left,
            lr_top,
            dihedral,
            perm,
            lr_mean,
            hr_mean,
        },
    })
}

//! Training-data synthesis, augmentation and noise estimation.

mod augment;
mod dataset;
mod degrade;
mod noise;
mod patch;
mod queue;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::imaging::ImageError;
use crate::tensor::TensorError;

pub use augment::{ChannelPerm, Dihedral};
pub use dataset::{list_pngs, ImagePair, PairDataset};
pub use degrade::{make_lr, DegradationSpec};
pub use noise::{estimate_noise, NoiseReport, FLAT_WINDOW, HISTOGRAM_BINS};
pub use patch::{sample_patch, AppliedTransform, Patch, PatchConfig};
pub(crate) use patch::subtract_channel_means;
pub use queue::{for_each_batch, sample_batch, Batch};
pub use synth::synthetic_image;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image {width}x{height} is smaller than scale {scale}")]
    TooSmall {
        width: usize,
        height: usize,
        scale: usize,
    },
    #[error("pair `{name}` is misaligned: HR {hr_w}x{hr_h} is not LR {lr_w}x{lr_h} times {scale}")]
    Misaligned {
        name: String,
        hr_w: usize,
        hr_h: usize,
        lr_w: usize,
        lr_h: usize,
        scale: usize,
    },
    #[error("patch of {patch} px does not fit a {width}x{height} image")]
    PatchTooLarge {
        patch: usize,
        width: usize,
        height: usize,
    },
    #[error("insufficient flat area: no 8x8 region has reference variance below threshold {threshold}")]
    InsufficientFlatArea { threshold: f64 },
    #[error("directory not found: {0}")]
    MissingDir(PathBuf),
    #[error("no images found in {0}")]
    Empty(PathBuf),
    #[error("unmatched filenames: {}", .0.join(", "))]
    Unmatched(Vec<String>),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// SplitMix64 finalizer; derives independent RNG seeds from `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

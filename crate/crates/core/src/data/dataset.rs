use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::imaging::{load_image, save_image, ImageBuffer};

use super::degrade::crop_divisible;
use super::{derive_seed, make_lr, DataError, DegradationSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    /// Shared filename stem.
    pub name: String,
    pub hr: ImageBuffer,
    pub lr: ImageBuffer,
}

/// HR/LR pairs laid out as `<root>/HR/*.png` and `<root>/LRx{scale}/*.png`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub scale: usize,
    pub pairs: Vec<ImagePair>,
}

/// PNG files in `dir` keyed by stem, sorted. Other files are skipped.
pub fn list_pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>, DataError> {
    if !dir.is_dir() {
        return Err(DataError::MissingDir(dir.to_path_buf()));
    }
    let entries = fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry
            .map_err(|source| DataError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png {
            log::warn!("skipping non-PNG file {}", path.display());
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

impl PairDataset {
    pub fn hr_dir(root: &Path) -> PathBuf {
        root.join("HR")
    }

    pub fn lr_dir(root: &Path, scale: usize) -> PathBuf {
        root.join(format!("LRx{scale}"))
    }

    pub fn load(root: &Path, scale: usize) -> Result<Self, DataError> {
        Self::load_dirs(&Self::hr_dir(root), &Self::lr_dir(root, scale), scale)
    }

    /// Loads pairs matched by stem. Every file must have a partner.
    pub fn load_dirs(hr_dir: &Path, lr_dir: &Path, scale: usize) -> Result<Self, DataError> {
        let hr = list_pngs(hr_dir)?;
        let lr = list_pngs(lr_dir)?;
        if hr.is_empty() {
            return Err(DataError::Empty(hr_dir.to_path_buf()));
        }
        if lr.is_empty() {
            return Err(DataError::Empty(lr_dir.to_path_buf()));
        }
        let mut unmatched: Vec<String> = hr.keys().filter(|k| !lr.contains_key(*k)).cloned().collect();
        unmatched.extend(lr.keys().filter(|k| !hr.contains_key(*k)).cloned());
        if !unmatched.is_empty() {
            unmatched.sort();
            return Err(DataError::Unmatched(unmatched));
        }
        let mut pairs = Vec::with_capacity(hr.len());
        for (name, hr_path) in &hr {
            let hr_img = load_image(hr_path)?;
            let lr_img = load_image(&lr[name])?;
            if (hr_img.width(), hr_img.height()) != (lr_img.width() * scale, lr_img.height() * scale) {
                return Err(DataError::Misaligned {
                    name: name.clone(),
                    hr_w: hr_img.width(),
                    hr_h: hr_img.height(),
                    lr_w: lr_img.width(),
                    lr_h: lr_img.height(),
                    scale,
                });
            }
            pairs.push(ImagePair {
                name: name.clone(),
                hr: hr_img,
                lr: lr_img,
            });
        }
        Ok(Self { scale, pairs })
    }

    /// Degrades each HR image. Image `i` uses noise seed `derive_seed(spec.seed, i)`;
    /// HR images are cropped to a size divisible by the scale.
    pub fn synthesize(hr_images: Vec<(String, ImageBuffer)>, spec: &DegradationSpec) -> Result<Self, DataError> {
        spec.validate()?;
        let mut pairs = Vec::with_capacity(hr_images.len());
        for (i, (name, hr)) in hr_images.into_iter().enumerate() {
            let lr = make_lr(&hr, &spec.with_seed(derive_seed(spec.seed, i as u64)))?;
            let hr = crop_divisible(&hr, spec.scale)?;
            pairs.push(ImagePair { name, hr, lr });
        }
        Ok(Self {
            scale: spec.scale,
            pairs,
        })
    }

    pub fn write(&self, root: &Path) -> Result<(), DataError> {
        let hr_dir = Self::hr_dir(root);
        let lr_dir = Self::lr_dir(root, self.scale);
        for dir in [&hr_dir, &lr_dir] {
            fs::create_dir_all(dir).map_err(|source| DataError::Io {
                path: dir.clone(),
                source,
            })?;
        }
        for pair in &self.pairs {
            let file = format!("{}.png", pair.name);
            save_image(&pair.hr, &hr_dir.join(&file))?;
            save_image(&pair.lr, &lr_dir.join(&file))?;
        }
        Ok(())
    }

    /// Keeps only the named pairs, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self, DataError> {
        let mut pairs = Vec::with_capacity(names.len());
        let mut missing = Vec::new();
        for name in names {
            match self.pairs.iter().find(|p| &p.name == name) {
                Some(p) => pairs.push(p.clone()),
                None => missing.push(name.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(DataError::Unmatched(missing));
        }
        Ok(Self {
            scale: self.scale,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

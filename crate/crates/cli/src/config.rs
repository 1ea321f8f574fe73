//! `[section]` + `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use srlab_core::data::PatchConfig;
use srlab_core::models::{ModelSpec, MODEL_KEYS};
use srlab_core::train::TrainConfig;

use crate::CliError;

/// Everything `srlab train` needs, resolved from file and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub denoiser_ckpt: Option<PathBuf>,
    pub sr_ckpt: Option<PathBuf>,
    pub train: TrainConfig,
    pub patch: PatchConfig,
    /// Blur applied when deriving clean LR targets for denoiser training.
    pub blur_sigma: f64,
    /// The last `val_count` pairs (by name) are held out for validation.
    pub val_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            denoiser_ckpt: None,
            sr_ckpt: None,
            train: TrainConfig::default(),
            patch: PatchConfig::default(),
            blur_sigma: 0.0,
            val_count: 0,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, CliError> {
    value
        .parse()
        .map_err(|_| config_err(format!("{key}: cannot parse `{value}`")))
}

impl RunConfig {
    /// Applies one `section.key = value` setting.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        let full = format!("{section}.{key}");
        match section {
            "model" => match key {
                "denoiser_ckpt" => self.denoiser_ckpt = Some(PathBuf::from(value)),
                "sr_ckpt" => self.sr_ckpt = Some(PathBuf::from(value)),
                "mean_shift" => return Err(config_err("model.mean_shift follows data.per_image_mean_shift; set that instead")),
                _ if MODEL_KEYS.contains(&key) => self.model.set(key, value).map_err(|e| config_err(e.to_string()))?,
                _ => return Err(config_err(format!("unknown key {full}"))),
            },
            "train" => self.train.set(key, value).map_err(|e| config_err(e.to_string()))?,
            "data" => match key {
                "lr_patch" => self.patch.lr_patch = parse(&full, value)?,
                "augment_flips" => self.patch.augment_flips = parse(&full, value)?,
                "augment_rot90" => self.patch.augment_rot90 = parse(&full, value)?,
                "augment_rgb_shuffle" => self.patch.augment_rgb_shuffle = parse(&full, value)?,
                "per_image_mean_shift" => self.patch.per_image_mean_shift = parse(&full, value)?,
                "blur_sigma" => self.blur_sigma = parse(&full, value)?,
                "val_count" => self.val_count = parse(&full, value)?,
                _ => return Err(config_err(format!("unknown key {full}"))),
            },
            _ => return Err(config_err(format!("unknown section [{section}]"))),
        }
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn set_override(&mut self, setting: &str) -> Result<(), CliError> {
        let (path, value) = setting
            .split_once('=')
            .ok_or_else(|| config_err(format!("override `{setting}` is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| config_err(format!("override `{setting}` is not section.key=value")))?;
        self.set(section, key, value)
    }

    pub fn parse_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", n + 1)))?;
            let section = section
                .as_deref()
                .ok_or_else(|| config_err(format!("line {}: key outside a section", n + 1)))?;
            self.set(section, key.trim(), value)
                .map_err(|e| config_err(format!("line {}: {}", n + 1, e.message())))?;
        }
        Ok(())
    }

    /// Cross-field checks and derived values.
    pub fn finish(&mut self) -> Result<(), CliError> {
        self.model.mean_shift = self.patch.per_image_mean_shift;
        self.patch.scale = self.model.scale();
        self.patch.seed = srlab_core::data::derive_seed(self.train.seed, 1);
        self.model.validate().map_err(|e| config_err(e.to_string()))?;
        self.train.validate().map_err(|e| config_err(e.to_string()))?;
        if self.patch.lr_patch == 0 {
            return Err(config_err("data.lr_patch must be positive"));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(config_err("data.blur_sigma must be a finite value >= 0"));
        }
        Ok(())
    }

    /// The fully resolved configuration, parseable by [`RunConfig::parse_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::from("[model]\n");
        for (k, v) in self.model.entries() {
            if k != "mean_shift" {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        if let Some(p) = &self.denoiser_ckpt {
            let _ = writeln!(out, "denoiser_ckpt = {}", p.display());
        }
        if let Some(p) = &self.sr_ckpt {
            let _ = writeln!(out, "sr_ckpt = {}", p.display());
        }
        out += "\n[train]\n";
        for (k, v) in self.train.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        let p = &self.patch;
        let _ = write!(
            out,
            "\n[data]\nlr_patch = {}\naugment_flips = {}\naugment_rot90 = {}\naugment_rgb_shuffle = {}\nper_image_mean_shift = {}\nblur_sigma = {}\nval_count = {}\n",
            p.lr_patch, p.augment_flips, p.augment_rot90, p.augment_rgb_shuffle, p.per_image_mean_shift, self.blur_sigma, self.val_count
        );
        out
    }
}

use std::fmt;
use std::str::FromStr;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsampler {
    SubpixelDirect,
    SubpixelChainedX2,
    TransposedConv,
}

impl fmt::Display for Upsampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Upsampler::SubpixelDirect => "subpixel_direct",
            Upsampler::SubpixelChainedX2 => "subpixel_chained_x2",
            Upsampler::TransposedConv => "transposed_conv",
        })
    }
}

impl FromStr for Upsampler {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "subpixel_direct" => Ok(Upsampler::SubpixelDirect),
            "subpixel_chained_x2" => Ok(Upsampler::SubpixelChainedX2),
            "transposed_conv" => Ok(Upsampler::TransposedConv),
            _ => Err(format!(
                "unknown upsampler `{s}` (expected subpixel_direct, subpixel_chained_x2 or transposed_conv)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Baseline,
    Denoiser,
    Dnisr,
    Dnsr,
    Adrsr,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Denoiser => "denoiser",
            ModelKind::Dnisr => "dnisr",
            ModelKind::Dnsr => "dnsr",
            ModelKind::Adrsr => "adrsr",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "denoiser" => Ok(ModelKind::Denoiser),
            "dnisr" => Ok(ModelKind::Dnisr),
            "dnsr" => Ok(ModelKind::Dnsr),
            "adrsr" => Ok(ModelKind::Adrsr),
            _ => Err(format!(
                "unknown model kind `{s}` (expected baseline, denoiser, dnisr, dnsr or adrsr)"
            )),
        }
    }
}

/// EDSR-style residual network with a learned upsampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineSpec {
    pub n_blocks: usize,
    pub n_feats: usize,
    pub kernel: usize,
    pub scale: usize,
    pub upsampler: Upsampler,
    pub residual_scale_init: f64,
    pub residual_scale_trainable: bool,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            n_blocks: 4,
            n_feats: 16,
            kernel: 3,
            scale: 2,
            upsampler: Upsampler::SubpixelDirect,
            residual_scale_init: 0.1,
            residual_scale_trainable: true,
        }
    }
}

fn conv_count(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + cout
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if ![2, 4, 8].contains(&self.scale) {
            return Err(ModelError::Spec(format!("scale must be 2, 4 or 8, got {}", self.scale)));
        }
        if self.n_feats == 0 || self.kernel == 0 {
            return Err(ModelError::Spec("n_feats and kernel must be positive".into()));
        }
        if self.upsampler == Upsampler::TransposedConv && self.scale % 2 != 0 {
            return Err(ModelError::Spec(format!(
                "transposed_conv upsampler needs an even scale, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn upsampler_params(&self) -> usize {
        let (f, s, k) = (self.n_feats, self.scale, self.kernel);
        match self.upsampler {
            Upsampler::SubpixelDirect => conv_count(f, f * s * s, k),
            Upsampler::SubpixelChainedX2 => s.trailing_zeros() as usize * conv_count(f, 4 * f, k),
            Upsampler::TransposedConv => f * f * (2 * s) * (2 * s) + f,
        }
    }

    /// Closed-form parameter count:
    /// `conv(3,F) + B·(2·conv(F,F) + t) + conv(F,F) + up + conv(F,3)` with
    /// `conv(a,b) = a·b·k² + b` and `t = 1` when the residual scale is trainable.
    pub fn param_count(&self) -> usize {
        let (f, k) = (self.n_feats, self.kernel);
        let block = 2 * conv_count(f, f, k) + usize::from(self.residual_scale_trainable);
        conv_count(3, f, k) + self.n_blocks * block + conv_count(f, f, k) + self.upsampler_params() + conv_count(f, 3, k)
    }
}

/// DnCNN-style plain conv stack without normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserSpec {
    pub depth: usize,
    pub n_feats: usize,
    pub residual_output: bool,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self {
            depth: 7,
            n_feats: 16,
            residual_output: true,
        }
    }
}

pub const DENOISER_KERNEL: usize = 3;

impl DenoiserSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth < 3 {
            return Err(ModelError::Spec(format!("denoiser depth must be at least 3, got {}", self.depth)));
        }
        if self.n_feats == 0 {
            return Err(ModelError::Spec("denoiser n_feats must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (f, k) = (self.n_feats, DENOISER_KERNEL);
        conv_count(3, f, k) + (self.depth - 2) * conv_count(f, f, k) + conv_count(f, 3, k)
    }
}

/// Full description of a model; fields irrelevant to `kind` are carried but unused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub sr: BaselineSpec,
    pub denoiser: DenoiserSpec,
    pub bridge_kernel: usize,
    pub levels: usize,
    pub fuse_kernel: usize,
    /// Inputs and targets have their per-channel means removed.
    pub mean_shift: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Baseline,
            sr: BaselineSpec::default(),
            denoiser: DenoiserSpec::default(),
            bridge_kernel: 5,
            levels: 2,
            fuse_kernel: 3,
            mean_shift: false,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "kind",
    "n_blocks",
    "n_feats",
    "kernel",
    "scale",
    "upsampler",
    "residual_scale_init",
    "residual_scale_trainable",
    "denoiser_depth",
    "denoiser_feats",
    "denoiser_residual",
    "bridge_kernel",
    "levels",
    "fuse_kernel",
    "mean_shift",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ModelError>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| ModelError::Spec(format!("model.{key}: cannot parse `{value}`: {e}")))
}

impl ModelSpec {
    pub fn baseline(sr: BaselineSpec) -> Self {
        Self {
            sr,
            ..Default::default()
        }
    }

    pub fn denoiser(denoiser: DenoiserSpec) -> Self {
        Self {
            kind: ModelKind::Denoiser,
            denoiser,
            ..Default::default()
        }
    }

    /// Output resolution multiplier.
    pub fn scale(&self) -> usize {
        match self.kind {
            ModelKind::Denoiser => 1,
            _ => self.sr.scale,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.kind {
            ModelKind::Baseline => self.sr.validate(),
            ModelKind::Denoiser => self.denoiser.validate(),
            ModelKind::Dnisr | ModelKind::Dnsr => {
                self.sr.validate()?;
                self.denoiser.validate()?;
                if self.kind == ModelKind::Dnsr {
                    let expect = DENOISER_KERNEL + self.sr.kernel - 1;
                    if self.sr.kernel % 2 == 0 {
                        return Err(ModelError::Spec(format!(
                            "bridge needs donors of equal kernel parity (denoiser {DENOISER_KERNEL}, sr head {})",
                            self.sr.kernel
                        )));
                    }
                    if self.bridge_kernel != expect {
                        return Err(ModelError::Spec(format!(
                            "bridge_kernel must be {expect} to compose a {DENOISER_KERNEL}x{DENOISER_KERNEL} tail with a {k}x{k} head, got {}",
                            self.bridge_kernel,
                            k = self.sr.kernel
                        )));
                    }
                }
                Ok(())
            }
            ModelKind::Adrsr => {
                self.sr.validate()?;
                if self.levels == 0 {
                    return Err(ModelError::Spec("levels must be at least 1".into()));
                }
                if self.fuse_kernel == 0 {
                    return Err(ModelError::Spec("fuse_kernel must be positive".into()));
                }
                Ok(())
            }
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        match key {
            "kind" => self.kind = value.trim().parse().map_err(ModelError::Spec)?,
            "n_blocks" => self.sr.n_blocks = parse(key, value)?,
            "n_feats" => self.sr.n_feats = parse(key, value)?,
            "kernel" => self.sr.kernel = parse(key, value)?,
            "scale" => self.sr.scale = parse(key, value)?,
            "upsampler" => self.sr.upsampler = value.trim().parse().map_err(ModelError::Spec)?,
            "residual_scale_init" => self.sr.residual_scale_init = parse(key, value)?,
            "residual_scale_trainable" => self.sr.residual_scale_trainable = parse(key, value)?,
            "denoiser_depth" => self.denoiser.depth = parse(key, value)?,
            "denoiser_feats" => self.denoiser.n_feats = parse(key, value)?,
            "denoiser_residual" => self.denoiser.residual_output = parse(key, value)?,
            "bridge_kernel" => self.bridge_kernel = parse(key, value)?,
            "levels" => self.levels = parse(key, value)?,
            "fuse_kernel" => self.fuse_kernel = parse(key, value)?,
            "mean_shift" => self.mean_shift = parse(key, value)?,
            _ => return Err(ModelError::Spec(format!("unknown key model.{key}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, in [`MODEL_KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.kind.to_string(),
            self.sr.n_blocks.to_string(),
            self.sr.n_feats.to_string(),
            self.sr.kernel.to_string(),
            self.sr.scale.to_string(),
            self.sr.upsampler.to_string(),
            format!("{:?}", self.sr.residual_scale_init),
            self.sr.residual_scale_trainable.to_string(),
            self.denoiser.depth.to_string(),
            self.denoiser.n_feats.to_string(),
            self.denoiser.residual_output.to_string(),
            self.bridge_kernel.to_string(),
            self.levels.to_string(),
            self.fuse_kernel.to_string(),
            self.mean_shift.to_string(),
        ];
        MODEL_KEYS.iter().copied().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut spec = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Spec(format!("malformed spec line `{line}`")))?;
            spec.set(k.trim(), v)?;
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_by_hand() {
        let spec = BaselineSpec {
            n_blocks: 2,
            n_feats: 8,
            kernel: 3,
            scale: 2,
            upsampler: Upsampler::SubpixelDirect,
            residual_scale_init: 0.1,
            residual_scale_trainable: true,
        };
        // head 3·8·9+8, blocks 2·(2·(8·8·9+8)+1), body tail 8·8·9+8, up 8·32·9+32, tail 8·3·9+3
        let hand = 224 + 2 * (2 * 584 + 1) + 584 + 2336 + 219;
        assert_eq!(spec.param_count(), hand);
    }

    #[test]
    fn text_round_trip_and_unknown_key() {
        let mut spec = ModelSpec::default();
        spec.set("kind", "dnsr").unwrap();
        spec.set("upsampler", "transposed_conv").unwrap();
        spec.set("residual_scale_init", "0.25").unwrap();
        spec.set("mean_shift", "true").unwrap();
        assert_eq!(ModelSpec::from_text(&spec.to_text()).unwrap(), spec);
        assert!(spec.set("n_feets", "3").is_err());
        assert!(spec.set("scale", "two").is_err());
    }

    #[test]
    fn validation() {
        let mut spec = ModelSpec::default();
        spec.sr.scale = 3;
        assert!(spec.validate().is_err());
        let mut spec = ModelSpec {
            kind: ModelKind::Dnsr,
            ..Default::default()
        };
        assert!(spec.validate().is_ok());
        spec.bridge_kernel = 3;
        assert!(spec.validate().is_err());
        spec.denoiser.depth = 2;
        assert!(ModelSpec::denoiser(spec.denoiser).validate().is_err());
    }
}

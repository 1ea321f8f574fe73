//! Network definitions built on the tensor tape, and their checkpoint format.
//!
//! Models take and return pixel values on the 0-255 scale; internally they
//! work on values divided by 256, a power of two so the rescaling is exact and
//! chained models compose without rounding drift.

mod baseline;
pub mod checkpoint;
mod composite;
mod denoiser;
mod layers;
mod spec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::imaging::ImageError;
use crate::tensor::{Element, ParamStore, Parameter, Tape, Tensor, TensorError, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LoadFilter};
pub use composite::{build_dnisr, build_dnsr, compose_kernels, level_prefixes, max_levels};
pub use spec::{BaselineSpec, DenoiserSpec, ModelKind, ModelSpec, Upsampler, DENOISER_KERNEL, MODEL_KEYS};

pub const PIXEL_RANGE: f64 = 256.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("incompatible donor: {0}")]
    Donor(String),
    #[error("{levels} pyramid levels need an input whose sides are divisible by 2^(levels-1) and at most {max} levels fit a {height}x{width} input")]
    TooManyLevels {
        levels: usize,
        max: usize,
        height: usize,
        width: usize,
    },
    #[error("level {level} does not exist in a {levels}-level model")]
    Level { level: usize, levels: usize },
    #[error("not a checkpoint: {0}")]
    NotCheckpoint(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("unknown tensor names: {}", .0.join(", "))]
    UnknownTensors(Vec<String>),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// A network: its spec plus named parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Element> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
}

impl<T: Element> Model<T> {
    /// Fresh initialisation, deterministic in `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        Self::fresh(&spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub(crate) fn fresh<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self, ModelError> {
        spec.validate()?;
        let params = match spec.kind {
            ModelKind::Baseline => {
                let mut p = ParamStore::new();
                baseline::add_params(&mut p, "", &spec.sr, 3, true, rng)?;
                p
            }
            ModelKind::Denoiser => {
                let mut p = ParamStore::new();
                denoiser::add_params(&mut p, "", &spec.denoiser, true, rng)?;
                p
            }
            ModelKind::Dnisr => composite::add_dnisr_params(spec, rng)?,
            ModelKind::Dnsr => composite::add_dnsr_params(spec, rng)?,
            ModelKind::Adrsr => composite::add_adrsr_params(spec, rng)?,
        };
        Ok(Self { spec: *spec, params })
    }

    pub fn scale(&self) -> usize {
        self.spec.scale()
    }

    pub fn param(&self, name: &str) -> Result<&Parameter<T>, ModelError> {
        self.params
            .by_name(name)
            .ok_or_else(|| ModelError::Tensor(TensorError::UnknownParameter(name.to_string())))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Records the forward pass of `x` (`N×3×H×W`, 0-255 scale).
    pub fn forward(&self, tape: &Tape<T>, x: Var) -> Result<Var, ModelError> {
        self.forward_level(tape, x, 0)
    }

    /// Like [`Model::forward`] but for the pyramid network returns the
    /// reconstruction at `level` (resolution divided by `2^level`), computed
    /// without the finer levels. Other kinds accept only level 0.
    pub fn forward_level(&self, tape: &Tape<T>, x: Var, level: usize) -> Result<Var, ModelError> {
        let net = layers::Net {
            tape,
            params: &self.params,
        };
        let levels = if self.spec.kind == ModelKind::Adrsr { self.spec.levels } else { 1 };
        if level >= levels {
            return Err(ModelError::Level { level, levels });
        }
        let xn = tape.scale(x, 1.0 / PIXEL_RANGE);
        let spec = &self.spec;
        let out = match spec.kind {
            ModelKind::Baseline => baseline::forward(&net, "", &spec.sr, xn)?,
            ModelKind::Denoiser => denoiser::forward(&net, "", &spec.denoiser, xn)?,
            ModelKind::Dnisr => composite::dnisr_forward(&net, spec, xn)?,
            ModelKind::Dnsr => composite::dnsr_forward(&net, spec, xn)?,
            ModelKind::Adrsr => composite::adrsr_forward(&net, spec, xn, level)?,
        };
        Ok(tape.scale(out, PIXEL_RANGE))
    }

    /// Gradient-free forward pass.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let tape = Tape::no_grad();
        let v = tape.constant(x.clone());
        let y = self.forward(&tape, v)?;
        Ok(tape.value(y))
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            let id = params.insert(p.name.clone(), p.value.cast()).expect("names already unique");
            params.get_mut(id).trainable = p.trainable;
        }
        Model {
            spec: self.spec,
            params,
        }
    }

    /// Copies every parameter of `src` whose name starts with `src_prefix` into
    /// `self`, renamed by swapping that prefix for `dst_prefix`. Returns the count.
    pub fn copy_from(&mut self, src: &Model<T>, src_prefix: &str, dst_prefix: &str) -> Result<usize, ModelError> {
        let mut unknown = Vec::new();
        let mut copied = 0;
        for p in src.params.iter().filter(|p| p.name.starts_with(src_prefix)) {
            let name = format!("{dst_prefix}{}", &p.name[src_prefix.len()..]);
            match self.params.by_name_mut(&name) {
                Some(dst) if dst.value.shape() == p.value.shape() => {
                    dst.value = p.value.clone();
                    copied += 1;
                }
                Some(dst) => {
                    return Err(ModelError::ShapeMismatch {
                        name,
                        found: p.value.shape().to_vec(),
                        expected: dst.value.shape().to_vec(),
                    })
                }
                None => unknown.push(name),
            }
        }
        if !unknown.is_empty() {
            return Err(ModelError::UnknownTensors(unknown));
        }
        Ok(copied)
    }
}

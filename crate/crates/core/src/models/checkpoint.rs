//! Binary checkpoints.
//!
//! Layout (little-endian): magic `SRCKPT01`, `u32` version, `u32` tensor count,
//! then per tensor `u16` name length, UTF-8 name, `u8` dtype, `u8` rank,
//! `rank × u64` dims and the raw values. An optional second section (`u32`
//! count plus tensors named `opt.*`) holds optimizer state. A `u32` CRC32 of all
//! preceding bytes closes the file.

use std::fs;
use std::path::Path;

use crate::tensor::{DType, Element, Tensor};

use super::{Model, ModelError, ModelSpec};

pub const MAGIC: &[u8; 8] = b"SRCKPT01";
pub const VERSION: u32 = 1;
const SPEC_NAME: &str = "meta.spec";
const STEP_NAME: &str = "meta.step";

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Element> {
    pub model: Model<T>,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    pub optimizer: Vec<(String, Tensor<T>)>,
}

/// Selects tensors by name prefix and renames that prefix on the way in.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadFilter {
    pub prefix: String,
    pub remap: String,
}

fn put_tensor<T: Element>(buf: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(T::DTYPE.code());
    buf.push(t.shape().len() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    T::to_le_bytes_vec(t.data(), buf);
}

fn text_tensor<T: Element>(text: &str) -> Tensor<T> {
    let bytes: Vec<T> = text.bytes().map(|b| T::from_f64_lossy(f64::from(b))).collect();
    Tensor::from_vec(vec![bytes.len()], bytes).expect("1-D")
}

pub fn encode<T: Element>(model: &Model<T>, step: u64, optimizer: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&((model.params.len() + 2) as u32).to_le_bytes());
    put_tensor::<f64>(&mut buf, SPEC_NAME, &text_tensor(&model.spec.to_text()));
    put_tensor::<f64>(&mut buf, STEP_NAME, &Tensor::scalar(step as f64));
    for p in model.params.iter() {
        put_tensor(&mut buf, &p.name, &p.value);
    }
    if !optimizer.is_empty() {
        buf.extend_from_slice(&(optimizer.len() as u32).to_le_bytes());
        for (name, t) in optimizer {
            put_tensor(&mut buf, name, t);
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn save_checkpoint<T: Element>(
    path: &Path,
    model: &Model<T>,
    step: u64,
    optimizer: &[(String, Tensor<T>)],
) -> Result<(), ModelError> {
    let bytes = encode(model, step, optimizer);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(ModelError::Truncated(format!("while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ModelError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn tensor<T: Element>(&mut self) -> Result<(String, Tensor<T>), ModelError> {
        let len = self.u16("name length")? as usize;
        let name = std::str::from_utf8(self.take(len, "tensor name")?)
            .map_err(|_| ModelError::NotCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let code = self.u8("dtype")?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| ModelError::NotCheckpoint(format!("tensor `{name}` has unknown dtype {code}")))?;
        let rank = self.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64("dims")? as usize);
        }
        let numel: usize = shape.iter().product();
        let t = match dtype {
            DType::F32 => self.values::<f32>(&name, numel)?.cast::<T>(),
            DType::F64 => self.values::<f64>(&name, numel)?.cast::<T>(),
        };
        Ok((name, t.reshape(shape)?))
    }

    fn values<U: Element>(&mut self, name: &str, numel: usize) -> Result<Tensor<U>, ModelError> {
        let width = std::mem::size_of::<U>();
        let bytes = self.take(
            numel
                .checked_mul(width)
                .ok_or_else(|| ModelError::NotCheckpoint(format!("tensor `{name}` is absurdly large")))?,
            name,
        )?;
        let data = bytes.chunks_exact(width).map(U::from_le_chunk).collect();
        Ok(Tensor::from_vec(vec![numel], data)?)
    }
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Checkpoint<T>, ModelError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelError::NotCheckpoint("bad magic bytes".into()));
    }
    if bytes.len() < MAGIC.len() + 12 {
        return Err(ModelError::Truncated("file ends inside the header".into()));
    }
    let mut r = Reader {
        buf: &bytes[..bytes.len() - 4],
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(ModelError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    let count = r.u32("tensor count")?;
    let mut spec = None;
    let mut step = 0;
    let mut params = crate::tensor::ParamStore::new();
    for _ in 0..count {
        let (name, t) = r.tensor::<f64>()?;
        match name.as_str() {
            SPEC_NAME => {
                let text: String = t.data().iter().map(|&b| b as u8 as char).collect();
                spec = Some(ModelSpec::from_text(&text)?);
            }
            STEP_NAME => step = t.data().first().copied().unwrap_or(0.0) as u64,
            _ => {
                params.insert(name, t.cast::<T>())?;
            }
        }
    }
    let mut optimizer = Vec::new();
    if r.pos < r.buf.len() {
        let n = r.u32("optimizer count")?;
        for _ in 0..n {
            let (name, t) = r.tensor::<T>()?;
            optimizer.push((name, t));
        }
    }
    if stored != computed {
        return Err(ModelError::Checksum { stored, computed });
    }
    if r.pos != r.buf.len() {
        return Err(ModelError::NotCheckpoint(format!(
            "{} unexpected trailing bytes",
            r.buf.len() - r.pos
        )));
    }
    let spec = spec.ok_or_else(|| ModelError::NotCheckpoint(format!("missing `{SPEC_NAME}`")))?;
    let model = Model { spec, params };
    let expected = Model::<T>::new(spec, 0)?;
    for p in expected.params.iter() {
        let found = model.param(&p.name)?;
        if found.value.shape() != p.value.shape() {
            return Err(ModelError::ShapeMismatch {
                name: p.name.clone(),
                found: found.value.shape().to_vec(),
                expected: p.value.shape().to_vec(),
            });
        }
    }
    if model.params.len() != expected.params.len() {
        let extra = model
            .params
            .iter()
            .filter(|p| expected.params.by_name(&p.name).is_none())
            .map(|p| p.name.clone())
            .collect();
        return Err(ModelError::UnknownTensors(extra));
    }
    Ok(Checkpoint { model, step, optimizer })
}

/// Reads a checkpoint. Values stored in a different precision are converted.
pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>, ModelError> {
    decode(&fs::read(path)?)
}

/// Copies the filtered parameters of the checkpoint at `path` into `model`.
pub fn load_into<T: Element>(model: &mut Model<T>, path: &Path, filter: &LoadFilter) -> Result<usize, ModelError> {
    let ckpt = load_checkpoint::<T>(path)?;
    model.copy_from(&ckpt.model, &filter.prefix, &filter.remap)
}

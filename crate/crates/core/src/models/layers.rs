use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Element, ParamStore, Tape, Tensor, Var};

use super::ModelError;

/// Fan-in scaled Gaussian conv weight `cout×cin×k×k` plus an optional zero bias.
pub(crate) fn add_conv<T: Element, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    bias: bool,
    rng: &mut R,
) -> Result<(), ModelError> {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    let w = gaussian(vec![cout, cin, k, k], std, rng);
    store.insert(format!("{prefix}.weight"), w)?;
    if bias {
        store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![cout]))?;
    }
    Ok(())
}

pub(crate) fn gaussian<T: Element, R: Rng + ?Sized>(shape: Vec<usize>, std: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(normal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("sized")
}

/// Forward-pass context: a tape plus the store its parameters come from.
pub(crate) struct Net<'a, T: Element> {
    pub tape: &'a Tape<T>,
    pub params: &'a ParamStore<T>,
}

impl<T: Element> Net<'_, T> {
    pub fn param(&self, name: &str) -> Result<Var, ModelError> {
        Ok(self.tape.param_by_name(self.params, name)?)
    }

    pub fn has(&self, name: &str) -> bool {
        self.params.by_name(name).is_some()
    }

    /// Stride-1 "same" convolution. Even kernels pad by `k/2` and drop the
    /// trailing row and column.
    pub fn conv(&self, prefix: &str, x: Var) -> Result<Var, ModelError> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let bias_name = format!("{prefix}.bias");
        let b = if self.has(&bias_name) {
            Some(self.param(&bias_name)?)
        } else {
            None
        };
        let k = self.tape.shape(w)[2];
        let y = self.tape.conv2d(x, w, b, 1, k / 2)?;
        if k % 2 == 1 {
            return Ok(y);
        }
        let shape = self.tape.shape(x);
        Ok(self.tape.crop(y, 0, 0, shape[2], shape[3])?)
    }
}

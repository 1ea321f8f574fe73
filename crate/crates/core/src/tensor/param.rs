use indexmap::IndexMap;

use super::{Element, Gradients, Tensor, TensorError};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named learnable tensor. `trainable = false` freezes it for the optimizer.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub trainable: bool,
}

/// Ordered set of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Parameter<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        let (index, _) = self.params.insert_full(
            name.clone(),
            Parameter {
                name,
                value,
                grad: None,
                trainable: true,
            },
        );
        Ok(ParamId(index))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, TensorError> {
        self.params
            .get_index_of(name)
            .map(ParamId)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.values_mut()
    }

    /// Total number of scalar values across all parameters.
    pub fn count(&self) -> usize {
        self.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.iter_mut() {
            p.grad = None;
        }
    }

    /// Adds the parameter gradients collected by a backward pass.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => {
                    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
                None => p.grad = Some(g.clone()),
            }
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in self.iter_mut() {
            p.trainable = trainable;
        }
    }

    /// Marks exactly the parameters whose name starts with one of `prefixes` as
    /// trainable and freezes the rest. Returns how many matched each prefix.
    pub fn train_only(&mut self, prefixes: &[String]) -> Vec<usize> {
        let mut hits = vec![0; prefixes.len()];
        for p in self.params.values_mut() {
            let mut matched = false;
            for (i, prefix) in prefixes.iter().enumerate() {
                if p.name.starts_with(prefix.as_str()) {
                    hits[i] += 1;
                    matched = true;
                }
            }
            p.trainable = matched;
        }
        hits
    }
}

use std::collections::HashMap;

use super::{Element, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. State is keyed by parameter name so it
/// survives a checkpoint round-trip.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: HashMap<String, (Vec<T>, Vec<T>)>,
    missing_grads: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: HashMap::new(),
            missing_grads: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Number of trainable parameters that had no gradient at update time.
    pub fn missing_grad_warnings(&self) -> u64 {
        self.missing_grads
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update to every trainable parameter; frozen ones are untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        let (bc1, bc2) = (T::from_f64_lossy(bc1), T::from_f64_lossy(bc2));

        for p in params.iter_mut().filter(|p| p.trainable) {
            let n = p.value.numel();
            let grad = match &p.grad {
                Some(g) => g.clone(),
                None => {
                    self.missing_grads += 1;
                    log::warn!("parameter `{}` has no gradient; treating it as zero", p.name);
                    Tensor::zeros(p.value.shape().to_vec())
                }
            };
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Moment tensors and the step counter, for checkpointing.
    pub fn export_state(&self, params: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![(
            "opt.step".to_string(),
            Tensor::scalar(T::from_u64(self.step).expect("step fits")),
        )];
        for p in params.iter() {
            if let Some((m, v)) = self.moments.get(&p.name) {
                let shape = p.value.shape().to_vec();
                out.push((
                    format!("opt.m.{}", p.name),
                    Tensor::from_vec(shape.clone(), m.clone()).expect("moment shape"),
                ));
                out.push((
                    format!("opt.v.{}", p.name),
                    Tensor::from_vec(shape, v.clone()).expect("moment shape"),
                ));
            }
        }
        out
    }

    /// Restores state written by [`Adam::export_state`]; unknown names are ignored.
    pub fn import_state<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) {
        let mut firsts: HashMap<String, Vec<T>> = HashMap::new();
        let mut seconds: HashMap<String, Vec<T>> = HashMap::new();
        for (name, t) in entries {
            if name == "opt.step" {
                self.step = t.data()[0].to_u64().unwrap_or(0);
            } else if let Some(rest) = name.strip_prefix("opt.m.") {
                firsts.insert(rest.to_string(), t.data().to_vec());
            } else if let Some(rest) = name.strip_prefix("opt.v.") {
                seconds.insert(rest.to_string(), t.data().to_vec());
            }
        }
        for (name, m) in firsts {
            if let Some(v) = seconds.remove(&name) {
                self.moments.insert(name, (m, v));
            }
        }
    }
}

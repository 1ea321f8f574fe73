use crate::data::{subtract_channel_means, ChannelPerm, Dihedral};
use crate::imaging::{resize_bicubic, ImageBuffer};
use crate::models::{Model, ModelError};
use crate::tensor::{Tape, Tensor};

use super::TrainError;

/// Anything that maps a `1×3×H×W` image (0-255 scale) to its `×scale` version.
pub trait Upscaler: Sync {
    fn scale(&self) -> usize;

    fn upscale_tensor(&self, lr: &Tensor<f32>) -> Result<Tensor<f32>, TrainError>;

    /// Upscales and quantizes.
    fn upscale(&self, lr: &ImageBuffer) -> Result<ImageBuffer, TrainError> {
        Ok(ImageBuffer::from_tensor(&self.upscale_tensor(&lr.to_tensor())?)?)
    }
}

/// Runs the model on one image, removing and restoring the per-channel input
/// mean when the model was trained that way.
pub(crate) fn model_output(model: &Model<f32>, x: &Tensor<f32>, level: usize) -> Result<Tensor<f32>, ModelError> {
    let tape = Tape::no_grad();
    if !model.spec.mean_shift {
        let y = model.forward_level(&tape, tape.constant(x.clone()), level)?;
        return Ok(tape.value(y));
    }
    let (centred, means) = subtract_channel_means(x);
    let y = tape.value(model.forward_level(&tape, tape.constant(centred), level)?);
    let shape = y.shape().to_vec();
    let plane = y.numel() / 3;
    let mut data = y.into_vec();
    for (c, chunk) in data.chunks_exact_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|v| *v += means[c]);
    }
    Ok(Tensor::from_vec(shape, data)?)
}

impl Upscaler for Model<f32> {
    fn scale(&self) -> usize {
        Model::scale(self)
    }

    fn upscale_tensor(&self, lr: &Tensor<f32>) -> Result<Tensor<f32>, TrainError> {
        Ok(model_output(self, lr, 0)?)
    }
}

/// Plain bicubic interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bicubic {
    pub scale: usize,
}

impl Upscaler for Bicubic {
    fn scale(&self) -> usize {
        self.scale
    }

    fn upscale_tensor(&self, lr: &Tensor<f32>) -> Result<Tensor<f32>, TrainError> {
        let [_, _, h, w] = lr.dims4()?;
        Ok(resize_bicubic(lr, h * self.scale, w * self.scale)?)
    }
}

/// Test-time ensemble over the dihedral group, optionally also over all
/// channel permutations.
pub struct Ensemble<'a> {
    pub inner: &'a dyn Upscaler,
    pub rgb_shuffle: bool,
}

impl Upscaler for Ensemble<'_> {
    fn scale(&self) -> usize {
        self.inner.scale()
    }

    fn upscale_tensor(&self, lr: &Tensor<f32>) -> Result<Tensor<f32>, TrainError> {
        let perms: Vec<ChannelPerm> = if self.rgb_shuffle {
            ChannelPerm::all().to_vec()
        } else {
            vec![ChannelPerm::IDENTITY]
        };
        let mut acc: Option<Vec<f64>> = None;
        let mut shape = Vec::new();
        let mut passes = 0u32;
        for d in Dihedral::all() {
            let turned = d.apply(lr)?;
            for p in &perms {
                let y = self.inner.upscale_tensor(&p.apply(&turned)?)?;
                let back = d.inverse().apply(&p.inverse().apply(&y)?)?;
                match acc.as_mut() {
                    None => {
                        shape = back.shape().to_vec();
                        acc = Some(back.data().iter().map(|&v| f64::from(v)).collect());
                    }
                    Some(a) => a.iter_mut().zip(back.data()).for_each(|(s, &v)| *s += f64::from(v)),
                }
                passes += 1;
            }
        }
        let n = f64::from(passes);
        let data = acc.expect("at least one pass").into_iter().map(|v| (v / n) as f32).collect();
        Ok(Tensor::from_vec(shape, data)?)
    }
}

/// Averages the model over 8 (or 48 with `rgb_shuffle`) transformed passes and
/// quantizes the mean.
pub fn self_ensemble_predict(model: &dyn Upscaler, image: &ImageBuffer, rgb_shuffle: bool) -> Result<ImageBuffer, TrainError> {
    Ensemble {
        inner: model,
        rgb_shuffle,
    }
    .upscale(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_image;
    use crate::models::{BaselineSpec, ModelSpec};

    fn max_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
        a.max_abs_diff(b).unwrap()
    }

    #[test]
    fn equivariant_operator_is_a_fixed_point() {
        let x = synthetic_image(9, 20, 14).to_tensor();
        let b = Bicubic { scale: 2 };
        let single = b.upscale_tensor(&x).unwrap();
        for rgb in [false, true] {
            let e = Ensemble { inner: &b, rgb_shuffle: rgb }.upscale_tensor(&x).unwrap();
            assert_eq!(e.shape(), single.shape());
            assert!(max_diff(&e, &single) <= 1e-4, "rgb={rgb} diff={}", max_diff(&e, &single));
        }
    }

    #[test]
    fn rgb_ensemble_commutes_with_channel_permutations() {
        let model = Model::<f32>::new(
            ModelSpec::baseline(BaselineSpec {
                n_blocks: 1,
                n_feats: 4,
                ..BaselineSpec::default()
            }),
            4,
        )
        .unwrap();
        let x = synthetic_image(2, 12, 10).to_tensor();
        let e = Ensemble { inner: &model, rgb_shuffle: true };
        let base = e.upscale_tensor(&x).unwrap();
        for p in ChannelPerm::all() {
            let y = e.upscale_tensor(&p.apply(&x).unwrap()).unwrap();
            let back = p.inverse().apply(&y).unwrap();
            assert!(max_diff(&back, &base) <= 1e-4);
        }
        let img = synthetic_image(2, 12, 10);
        let out = self_ensemble_predict(&model, &img, false).unwrap();
        assert_eq!((out.width(), out.height()), (24, 20));
    }

    #[test]
    fn mean_shift_restores_the_input_mean() {
        let spec = ModelSpec {
            mean_shift: true,
            ..ModelSpec::denoiser(crate::models::DenoiserSpec::default())
        };
        let mut model = Model::<f32>::new(spec, 0).unwrap();
        for p in model.params.iter_mut() {
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
        let x = synthetic_image(5, 9, 7).to_tensor();
        assert!(max_diff(&model.upscale_tensor(&x).unwrap(), &x) <= 1e-4);
    }
}

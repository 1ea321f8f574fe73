use rand::Rng;

use crate::tensor::{Element, ParamStore, Tensor, Var};

use super::layers::{add_conv, Net};
use super::{BaselineSpec, ModelError, Upsampler};

/// Registers the parameters of a baseline network under `prefix`.
/// `in_channels` is 3 except for the widened head of the auxiliary-input composite.
pub(crate) fn add_params<T: Element, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    spec: &BaselineSpec,
    in_channels: usize,
    with_head: bool,
    rng: &mut R,
) -> Result<(), ModelError> {
    let (f, k) = (spec.n_feats, spec.kernel);
    if with_head {
        add_conv(store, &format!("{prefix}head"), in_channels, f, k, true, rng)?;
    }
    for i in 0..spec.n_blocks {
        add_conv(store, &format!("{prefix}body.{i}.conv1"), f, f, k, true, rng)?;
        add_conv(store, &format!("{prefix}body.{i}.conv2"), f, f, k, true, rng)?;
        if spec.residual_scale_trainable {
            let s = T::from_f64_lossy(spec.residual_scale_init);
            store.insert(format!("{prefix}body.{i}.res_scale"), Tensor::full(vec![1], s))?;
        }
    }
    add_conv(store, &format!("{prefix}body_tail"), f, f, k, true, rng)?;
    let s = spec.scale;
    match spec.upsampler {
        Upsampler::SubpixelDirect => add_conv(store, &format!("{prefix}up.0"), f, f * s * s, k, true, rng)?,
        Upsampler::SubpixelChainedX2 => {
            for j in 0..s.trailing_zeros() {
                add_conv(store, &format!("{prefix}up.{j}"), f, 4 * f, k, true, rng)?;
            }
        }
        Upsampler::TransposedConv => {
            // Weight layout Cin×Cout×k×k; fan-in counts the taps reaching one output.
            let std = (2.0 / (f * 4) as f64).sqrt();
            let w = super::layers::gaussian(vec![f, f, 2 * s, 2 * s], std, rng);
            store.insert(format!("{prefix}up.0.weight"), w)?;
            store.insert(format!("{prefix}up.0.bias"), Tensor::zeros(vec![f]))?;
        }
    }
    add_conv(store, &format!("{prefix}tail"), f, 3, k, true, rng)
}

pub(crate) fn head<T: Element>(net: &Net<'_, T>, prefix: &str, x: Var) -> Result<Var, ModelError> {
    net.conv(&format!("{prefix}head"), x)
}

/// Residual body, global skip, upsampler and output conv applied to head features `h`.
pub(crate) fn trunk<T: Element>(net: &Net<'_, T>, prefix: &str, spec: &BaselineSpec, h: Var) -> Result<Var, ModelError> {
    let tape = net.tape;
    let mut r = h;
    for i in 0..spec.n_blocks {
        let t = net.conv(&format!("{prefix}body.{i}.conv1"), r)?;
        let t = tape.relu(t);
        let t = net.conv(&format!("{prefix}body.{i}.conv2"), t)?;
        let scaled = if spec.residual_scale_trainable {
            let s = net.param(&format!("{prefix}body.{i}.res_scale"))?;
            tape.scale_by(t, s)?
        } else {
            tape.scale(t, spec.residual_scale_init)
        };
        r = tape.add(r, scaled)?;
    }
    let r = net.conv(&format!("{prefix}body_tail"), r)?;
    let mut u = tape.add(r, h)?;
    let s = spec.scale;
    match spec.upsampler {
        Upsampler::SubpixelDirect => {
            let c = net.conv(&format!("{prefix}up.0"), u)?;
            u = tape.pixel_shuffle(c, s)?;
        }
        Upsampler::SubpixelChainedX2 => {
            for j in 0..s.trailing_zeros() {
                let c = net.conv(&format!("{prefix}up.{j}"), u)?;
                u = tape.pixel_shuffle(c, 2)?;
            }
        }
        Upsampler::TransposedConv => {
            let w = net.param(&format!("{prefix}up.0.weight"))?;
            let b = net.param(&format!("{prefix}up.0.bias"))?;
            u = tape.conv_transpose2d(u, w, Some(b), s, s / 2)?;
        }
    }
    net.conv(&format!("{prefix}tail"), u)
}

pub(crate) fn forward<T: Element>(net: &Net<'_, T>, prefix: &str, spec: &BaselineSpec, x: Var) -> Result<Var, ModelError> {
    let h = head(net, prefix, x)?;
    trunk(net, prefix, spec, h)
}

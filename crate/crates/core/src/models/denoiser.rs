use rand::Rng;

use crate::tensor::{Element, ParamStore, Var};

use super::layers::{add_conv, Net};
use super::spec::DENOISER_KERNEL;
use super::{DenoiserSpec, ModelError};

pub(crate) fn add_params<T: Element, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    spec: &DenoiserSpec,
    with_tail: bool,
    rng: &mut R,
) -> Result<(), ModelError> {
    let (f, k) = (spec.n_feats, DENOISER_KERNEL);
    add_conv(store, &format!("{prefix}head"), 3, f, k, true, rng)?;
    for i in 0..spec.depth - 2 {
        add_conv(store, &format!("{prefix}body.{i}"), f, f, k, true, rng)?;
    }
    if with_tail {
        add_conv(store, &format!("{prefix}tail"), f, 3, k, true, rng)?;
    }
    Ok(())
}

/// Activations feeding the tail conv.
pub(crate) fn features<T: Element>(net: &Net<'_, T>, prefix: &str, spec: &DenoiserSpec, x: Var) -> Result<Var, ModelError> {
    let mut h = net.tape.relu(net.conv(&format!("{prefix}head"), x)?);
    for i in 0..spec.depth - 2 {
        h = net.tape.relu(net.conv(&format!("{prefix}body.{i}"), h)?);
    }
    Ok(h)
}

pub(crate) fn forward<T: Element>(net: &Net<'_, T>, prefix: &str, spec: &DenoiserSpec, x: Var) -> Result<Var, ModelError> {
    let h = features(net, prefix, spec, x)?;
    let r = net.conv(&format!("{prefix}tail"), h)?;
    if spec.residual_output {
        Ok(net.tape.sub(x, r)?)
    } else {
        Ok(r)
    }
}

//! Denoise-then-upscale composites and the multiscale pyramid network.

use rand::Rng;

use crate::imaging::resize_bicubic;
use crate::tensor::{Element, ParamStore, Tensor, Var};

use super::layers::{add_conv, Net};
use super::{baseline, denoiser, Model, ModelError, ModelKind, ModelSpec};

fn check_donors<T: Element>(den: &Model<T>, sr: &Model<T>) -> Result<(), ModelError> {
    if den.spec.kind != ModelKind::Denoiser {
        return Err(ModelError::Donor(format!("expected a denoiser donor, got {}", den.spec.kind)));
    }
    if sr.spec.kind != ModelKind::Baseline {
        return Err(ModelError::Donor(format!("expected a baseline SR donor, got {}", sr.spec.kind)));
    }
    if den.spec.mean_shift != sr.spec.mean_shift {
        return Err(ModelError::Donor("donors disagree on mean_shift".into()));
    }
    Ok(())
}

fn copy_prefixed<T: Element>(
    dst: &mut ParamStore<T>,
    src: &ParamStore<T>,
    prefix: &str,
    skip: &[&str],
) -> Result<(), ModelError> {
    for p in src.iter().filter(|p| !skip.contains(&p.name.as_str())) {
        dst.insert(format!("{prefix}{}", p.name), p.value.clone())?;
    }
    Ok(())
}

/// Auxiliary-input composite: the SR head sees `denoised ‖ original`, with the
/// weights on the original-image channels starting at zero.
pub fn build_dnisr<T: Element>(den: &Model<T>, sr: &Model<T>) -> Result<Model<T>, ModelError> {
    check_donors(den, sr)?;
    let mut params = ParamStore::new();
    copy_prefixed(&mut params, &den.params, "denoiser.", &[])?;
    let head = &sr.param("head.weight")?.value;
    let [f, c, k, _] = head.dims4()?;
    if c != 3 {
        return Err(ModelError::Donor(format!("SR head expects {c} input channels, not 3")));
    }
    let mut wide = vec![T::zero(); f * 6 * k * k];
    for o in 0..f {
        let src = &head.data()[o * 3 * k * k..(o + 1) * 3 * k * k];
        wide[o * 6 * k * k..o * 6 * k * k + 3 * k * k].copy_from_slice(src);
    }
    params.insert("sr.head.weight", Tensor::from_vec(vec![f, 6, k, k], wide)?)?;
    copy_prefixed(&mut params, &sr.params, "sr.", &["head.weight"])?;
    let spec = ModelSpec {
        kind: ModelKind::Dnisr,
        sr: sr.spec.sr,
        denoiser: den.spec.denoiser,
        mean_shift: sr.spec.mean_shift,
        ..ModelSpec::default()
    };
    Ok(Model { spec, params })
}

/// Full 2-D convolution of the SR head kernel with the denoiser tail kernel:
/// `out[o][i] = Σ_c head[o][c] ⊛ tail[c][i]`, extent `kh + kt − 1`.
pub fn compose_kernels(head: &Tensor<f64>, tail: &Tensor<f64>) -> Result<Tensor<f64>, ModelError> {
    let [fo, c, kh, _] = head.dims4()?;
    let [tc, fi, kt, _] = tail.dims4()?;
    if tc != c {
        return Err(ModelError::Donor(format!(
            "denoiser tail emits {tc} channels but the SR head reads {c}"
        )));
    }
    let kb = kh + kt - 1;
    let mut out = vec![0.0; fo * fi * kb * kb];
    let (hd, td) = (head.data(), tail.data());
    for o in 0..fo {
        for i in 0..fi {
            for ch in 0..c {
                for u1 in 0..kh {
                    for u2 in 0..kh {
                        let a = hd[((o * c + ch) * kh + u1) * kh + u2];
                        for v1 in 0..kt {
                            for v2 in 0..kt {
                                let b = td[((ch * fi + i) * kt + v1) * kt + v2];
                                out[((o * fi + i) * kb + u1 + v1) * kb + u2 + v2] += a * b;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_vec(vec![fo, fi, kb, kb], out)?)
}

/// Bridge composite: the denoiser tail and SR head collapse into one
/// `F_d → F_s` convolution initialised to their exact composition. A residual
/// denoiser also routes the input through `bridge_skip`, a copy of the SR head
/// without bias, because its output `x − tail(h)` depends on `x` directly.
pub fn build_dnsr<T: Element>(den: &Model<T>, sr: &Model<T>, bridge_kernel: usize) -> Result<Model<T>, ModelError> {
    check_donors(den, sr)?;
    let spec = ModelSpec {
        kind: ModelKind::Dnsr,
        sr: sr.spec.sr,
        denoiser: den.spec.denoiser,
        bridge_kernel,
        mean_shift: sr.spec.mean_shift,
        ..ModelSpec::default()
    };
    spec.validate()?;
    let head_w: Tensor<f64> = sr.param("head.weight")?.value.cast();
    let head_b: Tensor<f64> = sr.param("head.bias")?.value.cast();
    let tail_w: Tensor<f64> = den.param("tail.weight")?.value.cast();
    let tail_b: Tensor<f64> = den.param("tail.bias")?.value.cast();
    let residual = den.spec.denoiser.residual_output;
    let sign = if residual { -1.0 } else { 1.0 };
    let composed = compose_kernels(&head_w, &tail_w)?.map(|v| sign * v);
    let [fs, c, kh, _] = head_w.dims4()?;
    let bias: Vec<f64> = (0..fs)
        .map(|o| {
            let taps: f64 = (0..c)
                .map(|ch| {
                    let plane = &head_w.data()[(o * c + ch) * kh * kh..(o * c + ch + 1) * kh * kh];
                    plane.iter().sum::<f64>() * tail_b.data()[ch]
                })
                .sum();
            head_b.data()[o] + sign * taps
        })
        .collect();

    let mut params = ParamStore::new();
    copy_prefixed(&mut params, &den.params, "denoiser.", &["tail.weight", "tail.bias"])?;
    params.insert("bridge.weight", composed.cast())?;
    params.insert("bridge.bias", Tensor::from_vec(vec![fs], bias)?.cast())?;
    if residual {
        params.insert("bridge_skip.weight", head_w.cast())?;
    }
    copy_prefixed(&mut params, &sr.params, "sr.", &["head.weight", "head.bias"])?;
    Ok(Model { spec, params })
}

pub(crate) fn add_dnisr_params<T: Element, R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<ParamStore<T>, ModelError> {
    let den = Model::<T>::fresh(&ModelSpec::denoiser(spec.denoiser), rng)?;
    let sr = Model::<T>::fresh(&ModelSpec::baseline(spec.sr), rng)?;
    Ok(build_dnisr(&with_shift(den, spec), &with_shift(sr, spec))?.params)
}

pub(crate) fn add_dnsr_params<T: Element, R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<ParamStore<T>, ModelError> {
    let den = Model::<T>::fresh(&ModelSpec::denoiser(spec.denoiser), rng)?;
    let sr = Model::<T>::fresh(&ModelSpec::baseline(spec.sr), rng)?;
    Ok(build_dnsr(&with_shift(den, spec), &with_shift(sr, spec), spec.bridge_kernel)?.params)
}

fn with_shift<T: Element>(mut m: Model<T>, spec: &ModelSpec) -> Model<T> {
    m.spec.mean_shift = spec.mean_shift;
    m
}

pub(crate) fn dnisr_forward<T: Element>(net: &Net<'_, T>, spec: &ModelSpec, x: Var) -> Result<Var, ModelError> {
    let d = denoiser::forward(net, "denoiser.", &spec.denoiser, x)?;
    let joined = net.tape.concat(&[d, x])?;
    let h = baseline::head(net, "sr.", joined)?;
    baseline::trunk(net, "sr.", &spec.sr, h)
}

pub(crate) fn dnsr_forward<T: Element>(net: &Net<'_, T>, spec: &ModelSpec, x: Var) -> Result<Var, ModelError> {
    let f = denoiser::features(net, "denoiser.", &spec.denoiser, x)?;
    let mut h = net.conv("bridge", f)?;
    if net.has("bridge_skip.weight") {
        let skip = net.conv("bridge_skip", x)?;
        h = net.tape.add(h, skip)?;
    }
    baseline::trunk(net, "sr.", &spec.sr, h)
}

// ---- multiscale pyramid ----

pub(crate) fn add_adrsr_params<T: Element, R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<ParamStore<T>, ModelError> {
    let mut params = ParamStore::new();
    for k in 0..spec.levels {
        baseline::add_params(&mut params, &format!("level{k}."), &spec.sr, 3, true, rng)?;
    }
    let fk = spec.fuse_kernel;
    for k in 0..spec.levels.saturating_sub(1) {
        add_conv(&mut params, &format!("up{k}"), 3, 12, 3, true, rng)?;
        // Pass-through of the level output; the upsampled coarse channels start at zero.
        let mut w = vec![T::zero(); 3 * 6 * fk * fk];
        for c in 0..3 {
            w[(c * 6 + c) * fk * fk + (fk / 2) * fk + fk / 2] = T::one();
        }
        params.insert(format!("fuse{k}.weight"), Tensor::from_vec(vec![3, 6, fk, fk], w)?)?;
        params.insert(format!("fuse{k}.bias"), Tensor::zeros(vec![3]))?;
    }
    Ok(params)
}

/// Largest level count an `h×w` input supports: `floor(log2(min(h, w))) − 2`.
pub fn max_levels(h: usize, w: usize) -> usize {
    let m = h.min(w).max(1);
    (usize::BITS - 1 - m.leading_zeros()).saturating_sub(2) as usize
}

/// Reconstruction `R_level`, built from levels `level..L` only.
pub(crate) fn adrsr_forward<T: Element>(net: &Net<'_, T>, spec: &ModelSpec, x: Var, level: usize) -> Result<Var, ModelError> {
    let levels = spec.levels;
    if level >= levels {
        return Err(ModelError::Level { level, levels });
    }
    let shape = net.tape.shape(x);
    let (h, w) = (shape[2], shape[3]);
    if levels > 1 {
        let max = max_levels(h, w);
        let f = 1 << (levels - 1);
        if levels > max || h % f != 0 || w % f != 0 {
            return Err(ModelError::TooManyLevels {
                levels,
                max,
                height: h,
                width: w,
            });
        }
    }
    let xv = net.tape.value(x);
    let mut r: Option<Var> = None;
    for k in (level..levels).rev() {
        let input = if k == 0 {
            x
        } else {
            let down = resize_bicubic(&xv, h >> k, w >> k)?;
            net.tape.constant(down)
        };
        let out = baseline::forward(net, &format!("level{k}."), &spec.sr, input)?;
        r = Some(match r {
            None => out,
            Some(coarse) => {
                let up = net.tape.pixel_shuffle(net.conv(&format!("up{k}"), coarse)?, 2)?;
                let joined = net.tape.concat(&[out, up])?;
                net.conv(&format!("fuse{k}"), joined)?
            }
        });
    }
    Ok(r.expect("at least one level"))
}

/// Default trainable prefixes for the stage that fits level `k`.
pub fn level_prefixes(levels: usize, k: usize) -> Vec<String> {
    let mut p = vec![format!("level{k}.")];
    if k + 1 < levels {
        p.push(format!("fuse{k}."));
        p.push(format!("up{k}."));
    }
    p
}

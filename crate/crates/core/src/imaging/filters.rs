use crate::tensor::{Element, Tape, Tensor, TensorError, Var};

const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

/// Channel-diagonal `C×C×3×3` weight applying `kernel` to each channel independently.
fn depthwise_weight<T: Element>(channels: usize, kernel: &[f64; 9]) -> Tensor<T> {
    let mut w = vec![T::zero(); channels * channels * 9];
    for c in 0..channels {
        let base = (c * channels + c) * 9;
        for (dst, &k) in w[base..base + 9].iter_mut().zip(kernel) {
            *dst = T::from_f64_lossy(k);
        }
    }
    Tensor::from_vec(vec![channels, channels, 3, 3], w).expect("sobel weight shape")
}

/// Differentiable per-channel Sobel magnitude `√(Gx² + Gy²)` with zero padding.
pub fn sobel_on_tape<T: Element>(tape: &Tape<T>, x: Var) -> Result<Var, TensorError> {
    let [_, c, _, _] = tape.value(x).dims4()?;
    let kx = tape.constant(depthwise_weight(c, &SOBEL_X));
    let ky = tape.constant(depthwise_weight(c, &SOBEL_Y));
    let gx = tape.conv2d(x, kx, None, 1, 1)?;
    let gy = tape.conv2d(x, ky, None, 1, 1)?;
    let energy = tape.add(tape.mul(gx, gx)?, tape.mul(gy, gy)?)?;
    Ok(tape.sqrt(energy))
}

/// Per-channel Sobel gradient magnitude of an `N×C×H×W` tensor.
pub fn sobel<T: Element>(image: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let tape = Tape::no_grad();
    let x = tape.constant(image.clone());
    let y = sobel_on_tape(&tape, x)?;
    Ok(tape.value(y))
}

/// Separable Gaussian blur truncated at 3σ with replicated edges; `sigma = 0` is a no-op.
pub fn gaussian_blur<T: Element>(t: &Tensor<T>, sigma: f64) -> Result<Tensor<T>, TensorError> {
    let [n, c, h, w] = t.dims4()?;
    if sigma <= 0.0 {
        return Ok(t.clone());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|v| *v /= total);

    let clamp = |i: isize, len: usize| i.clamp(0, len as isize - 1) as usize;
    let mut out = Vec::with_capacity(t.numel());
    let mut tmp = vec![0.0f64; h * w];
    for plane in t.data().chunks_exact(h * w) {
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, &wt)| wt * plane[y * w + clamp(x as isize + k as isize - radius, w)].as_f64())
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = taps
                    .iter()
                    .enumerate()
                    .map(|(k, &wt)| wt * tmp[clamp(y as isize + k as isize - radius, h) * w + x])
                    .sum();
                out.push(T::from_f64_lossy(v));
            }
        }
    }
    Tensor::from_vec(vec![n, c, h, w], out)
}

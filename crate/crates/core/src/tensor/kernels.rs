//! Raw slice kernels behind the differentiable ops.
//!
//! Convolutions lower to im2col + GEMM per batch sample. Samples are processed
//! independently and weight gradients are reduced in sample order, so results
//! do not depend on how many worker threads rayon uses.

use rayon::prelude::*;

use super::{shape_err, Element, TensorError};

/// Geometry of a 2-D convolution (cross-correlation) with zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        op: &'static str,
        input: [usize; 4],
        weight: [usize; 4],
        stride: usize,
        pad: usize,
    ) -> Result<Self, TensorError> {
        let [n, cin, h, w] = input;
        let [cout, wcin, kh, kw] = weight;
        if stride == 0 {
            return Err(shape_err(op, "stride must be positive"));
        }
        if kh != kw || kh == 0 {
            return Err(shape_err(op, format!("kernel must be square and non-empty, got {kh}x{kw}")));
        }
        if wcin != cin {
            return Err(shape_err(
                op,
                format!("input has {cin} channels but weight expects {wcin} (weight shape {weight:?})"),
            ));
        }
        let k = kh;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(shape_err(
                op,
                format!("padded input {}x{} is smaller than the {k}x{k} kernel", h + 2 * pad, w + 2 * pad),
            ));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.cout * self.positions()
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[lo, hi)` for which input column `o*stride + tap - pad` is in range.
    fn valid_range(&self, tap: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if tap >= self.pad { 0 } else { (self.pad - tap).div_ceil(s) };
        let hi = if extent + self.pad > tap {
            ((extent + self.pad - tap - 1) / s + 1).min(out_extent)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.positions();
    let mut row = 0;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let dst = &mut col[row * p..(row + 1) * p];
                dst.fill(T::zero());
                let (x_lo, x_hi) = g.valid_range(kj, g.w, g.ow);
                let (y_lo, y_hi) = g.valid_range(ki, g.h, g.oh);
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let start = x_lo + kj - g.pad;
                        out[x_lo..x_hi].copy_from_slice(&src[start..start + (x_hi - x_lo)]);
                    } else {
                        for ox in x_lo..x_hi {
                            out[ox] = src[ox * g.stride + kj - g.pad];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.positions();
    let mut row = 0;
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let src = &col[row * p..(row + 1) * p];
                let (x_lo, x_hi) = g.valid_range(kj, g.w, g.ow);
                let (y_lo, y_hi) = g.valid_range(ki, g.h, g.oh);
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let s = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in x_lo..x_hi {
                        dst[ox * g.stride + kj - g.pad] += s[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

/// `y = conv(x, w) + bias`, output `N×Cout×OH×OW`.
pub(crate) fn conv2d_forward<T: Element>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (kl, p) = (g.patch_len(), g.positions());
    let mut out = vec![T::zero(); g.n * g.out_len()];
    if g.out_len() == 0 {
        return out;
    }
    out.par_chunks_mut(g.out_len())
        .zip(x.par_chunks(g.in_len().max(1)))
        .for_each_init(
            || vec![T::zero(); if g.is_pointwise() { 0 } else { kl * p }],
            |col, (y, xs)| {
                let cols: &[T] = if g.is_pointwise() {
                    xs
                } else {
                    im2col(xs, g, col);
                    col
                };
                if let Some(b) = bias {
                    for (co, plane) in y.chunks_exact_mut(p).enumerate() {
                        plane.fill(b[co]);
                    }
                }
                let beta = if bias.is_some() { T::one() } else { T::zero() };
                T::gemm(g.cout, kl, p, T::one(), w, (kl, 1), cols, (p, 1), beta, y, (p, 1));
            },
        );
    out
}

/// Gradient of the convolution with respect to its input (the transposed convolution).
pub(crate) fn conv2d_input_grad<T: Element>(dy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let (kl, p) = (g.patch_len(), g.positions());
    let mut dx = vec![T::zero(); g.n * g.in_len()];
    if g.in_len() == 0 {
        return dx;
    }
    dx.par_chunks_mut(g.in_len())
        .zip(dy.par_chunks(g.out_len().max(1)))
        .for_each_init(
            || vec![T::zero(); kl * p],
            |dcol, (dxs, dys)| {
                if g.is_pointwise() {
                    T::gemm(kl, g.cout, p, T::one(), w, (1, kl), dys, (p, 1), T::zero(), dxs, (p, 1));
                } else {
                    T::gemm(kl, g.cout, p, T::one(), w, (1, kl), dys, (p, 1), T::zero(), dcol, (p, 1));
                    col2im(dcol, g, dxs);
                }
            },
        );
    dx
}

/// Gradient of the convolution with respect to its weight, summed over the batch.
pub(crate) fn conv2d_weight_grad<T: Element>(dy: &[T], x: &[T], g: &ConvGeom) -> Vec<T> {
    let (kl, p) = (g.patch_len(), g.positions());
    let per_sample: Vec<Vec<T>> = (0..g.n)
        .into_par_iter()
        .map_init(
            || vec![T::zero(); if g.is_pointwise() { 0 } else { kl * p }],
            |col, s| {
                let xs = &x[s * g.in_len()..(s + 1) * g.in_len()];
                let dys = &dy[s * g.out_len()..(s + 1) * g.out_len()];
                let cols: &[T] = if g.is_pointwise() {
                    xs
                } else {
                    im2col(xs, g, col);
                    col
                };
                let mut dw = vec![T::zero(); g.cout * kl];
                T::gemm(g.cout, p, kl, T::one(), dys, (p, 1), cols, (1, p), T::zero(), &mut dw, (kl, 1));
                dw
            },
        )
        .collect();
    reduce_in_order(per_sample, g.cout * kl)
}

/// Sums `dy` over batch and spatial positions per channel.
pub(crate) fn channel_sums<T: Element>(dy: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            let start = (s * c + ch) * plane;
            *acc += dy[start..start + plane].iter().copied().sum::<T>();
        }
    }
    out
}

fn reduce_in_order<T: Element>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut total = vec![T::zero(); len];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

/// `out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w]`.
pub(crate) fn pixel_shuffle<T: Element>(x: &[T], dims: [usize; 4], r: usize) -> Vec<T> {
    let [n, cr, h, w] = dims;
    let c = cr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let src_c = ch * r * r + i * r + j;
                    let src = &x[((s * cr + src_c) * h) * w..((s * cr + src_c) * h + h) * w];
                    let dst_base = (s * c + ch) * oh * ow;
                    for y in 0..h {
                        let row = dst_base + (y * r + i) * ow + j;
                        for xx in 0..w {
                            out[row + xx * r] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`pixel_shuffle`]; `dims` are the dimensions of the shuffled (large) tensor.
pub(crate) fn pixel_unshuffle<T: Element>(x: &[T], dims: [usize; 4], r: usize) -> Vec<T> {
    let [n, c, oh, ow] = dims;
    let (h, w, cr) = (oh / r, ow / r, c * r * r);
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let dst_c = ch * r * r + i * r + j;
                    let dst_base = (s * cr + dst_c) * h * w;
                    let src_base = (s * c + ch) * oh * ow;
                    for y in 0..h {
                        let row = src_base + (y * r + i) * ow + j;
                        for xx in 0..w {
                            out[dst_base + y * w + xx] = x[row + xx * r];
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bruteforce() {
        for (k, stride, pad, extent) in [(3, 1, 1, 5), (3, 2, 1, 6), (4, 2, 1, 7), (5, 3, 4, 4), (2, 2, 0, 4)] {
            let g = ConvGeom::new("t", [1, 1, extent, extent], [1, 1, k, k], stride, pad).unwrap();
            for tap in 0..k {
                let (lo, hi) = g.valid_range(tap, extent, g.ow);
                let brute: Vec<usize> = (0..g.ow)
                    .filter(|&o| {
                        let i = (o * stride + tap) as isize - pad as isize;
                        i >= 0 && (i as usize) < extent
                    })
                    .collect();
                let fast: Vec<usize> = (lo..hi).collect();
                assert_eq!(brute, fast, "k={k} s={stride} p={pad} n={extent} tap={tap}");
            }
        }
    }

    #[test]
    fn pixel_unshuffle_inverts_shuffle() {
        let dims = [2, 8, 3, 2];
        let x: Vec<f64> = (0..dims.iter().product::<usize>()).map(|v| v as f64).collect();
        let y = pixel_shuffle(&x, dims, 2);
        assert_eq!(pixel_unshuffle(&y, [2, 2, 6, 4], 2), x);
    }
}

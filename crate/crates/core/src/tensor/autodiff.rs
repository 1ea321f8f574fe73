//! Tape-based reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends a node to the [`Tape`]. Nodes are
//! created in topological order, so [`Tape::backward`] is a single reverse
//! sweep. A tape built with [`Tape::no_grad`] records values only.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::{shape_err, Element, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy { x: Var, s: Var },
    Concat(Vec<Var>),
    Crop { x: Var, top: usize, left: usize },
    Mean(Var),
    Sum(Var),
    Abs(Var),
    Sqrt(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
    finite: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Debug)]
pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    record: bool,
    non_finite_origin: Cell<Option<&'static str>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of a backward pass: gradients of the leaves that required them.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    vars: HashMap<Var, Tensor<T>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Element> Gradients<T> {
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.vars.get(&var)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(id, g)| (*id, g))
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            record: true,
            non_finite_origin: Cell::new(None),
        }
    }

    /// A tape for inference: ops evaluate but nothing is differentiable.
    pub fn no_grad() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In debug builds, the first op that turned finite inputs into NaN/Inf.
    pub fn non_finite_origin(&self) -> Option<&'static str> {
        self.non_finite_origin.get()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, param: Option<ParamId>, leaf_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let inputs = op_inputs(&op);
        let requires_grad = self.record
            && if matches!(op, Op::Leaf) {
                leaf_grad
            } else {
                inputs.iter().any(|v| nodes[v.0].requires_grad)
            };
        let finite = if cfg!(debug_assertions) {
            let finite = value.is_finite();
            if !finite
                && !matches!(op, Op::Leaf)
                && inputs.iter().all(|v| nodes[v.0].finite)
                && self.non_finite_origin.get().is_none()
            {
                self.non_finite_origin.set(Some(op_name(&op)));
            }
            finite
        } else {
            true
        };
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
            finite,
        });
        Var(nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, None, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, None, true)
    }

    /// Records a parameter; it requires a gradient only while trainable.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Leaf, Some(id), p.trainable)
    }

    pub fn param_by_name(&self, store: &ParamStore<T>, name: &str) -> Result<Var, TensorError> {
        Ok(self.param(store, store.id(name)?))
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let wv = self.value(w);
        let geom = ConvGeom::new("conv2d", xv.dims4()?, weight_dims("conv2d", &wv)?, stride, padding)?;
        let bv = b.map(|b| self.value(b));
        check_bias("conv2d", bv.as_ref(), geom.cout)?;
        let out = kernels::conv2d_forward(xv.data(), wv.data(), bv.as_ref().map(|t| t.data()), &geom);
        let value = Tensor::from_vec(vec![geom.n, geom.cout, geom.oh, geom.ow], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, None, false))
    }

    /// Transposed convolution with weight `Cin×Cout×k×k`; output extent
    /// `(H−1)·stride − 2·padding + k`.
    pub fn conv_transpose2d(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let wv = self.value(w);
        let [n, cin, h, wd] = xv.dims4()?;
        let [wcin, cout, k, _] = weight_dims("conv_transpose2d", &wv)?;
        if wcin != cin {
            return Err(shape_err(
                "conv_transpose2d",
                format!("input has {cin} channels but weight expects {wcin} (weight shape {:?})", wv.shape()),
            ));
        }
        if stride == 0 || h == 0 || wd == 0 {
            return Err(shape_err("conv_transpose2d", "stride and input extents must be positive"));
        }
        let extent = |len: usize| ((len - 1) * stride + k).checked_sub(2 * padding).filter(|&v| v > 0);
        let (oh, ow) = match (extent(h), extent(wd)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(shape_err(
                    "conv_transpose2d",
                    format!("padding {padding} leaves no output for a {h}x{wd} input with kernel {k}"),
                ))
            }
        };
        // The adjoint view: a convolution from the Cout-channel output back to the input.
        let geom = ConvGeom::new("conv_transpose2d", [n, cout, oh, ow], [cin, cout, k, k], stride, padding)?;
        debug_assert_eq!((geom.oh, geom.ow), (h, wd));
        let bv = b.map(|b| self.value(b));
        check_bias("conv_transpose2d", bv.as_ref(), cout)?;
        let mut out = kernels::conv2d_input_grad(xv.data(), wv.data(), &geom);
        if let Some(bias) = &bv {
            for (i, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
                let b = bias.data()[i % cout];
                plane.iter_mut().for_each(|v| *v += b);
            }
        }
        let value = Tensor::from_vec(vec![n, cout, oh, ow], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }, None, false))
    }

    pub fn pixel_shuffle(&self, x: Var, r: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.dims4()?;
        if r == 0 || c % (r * r) != 0 {
            return Err(shape_err(
                "pixel_shuffle",
                format!("{c} channels are not divisible by r²={}", r * r),
            ));
        }
        let out = kernels::pixel_shuffle(xv.data(), [n, c, h, w], r);
        let value = Tensor::from_vec(vec![n, c / (r * r), h * r, w * r], out)?;
        Ok(self.push(value, Op::PixelShuffle(x, r), None, false))
    }

    pub fn pixel_unshuffle(&self, x: Var, r: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.dims4()?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(shape_err(
                "pixel_unshuffle",
                format!("spatial size {h}x{w} is not divisible by {r}"),
            ));
        }
        let out = kernels::pixel_unshuffle(xv.data(), [n, c, h, w], r);
        let value = Tensor::from_vec(vec![n, c * r * r, h / r, w / r], out)?;
        Ok(self.push(value, Op::PixelUnshuffle(x, r), None, false))
    }

    pub fn relu(&self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), None, false)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).zip_map(&self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), None, false))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).zip_map(&self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), None, false))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).zip_map(&self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), None, false))
    }

    /// Multiplies by a fixed scalar.
    pub fn scale(&self, x: Var, factor: f64) -> Var {
        let f = T::from_f64_lossy(factor);
        let value = self.value(x).map(|v| v * f);
        self.push(value, Op::Scale(x, f), None, false)
    }

    /// Multiplies by a one-element tensor `s` (typically a learned scalar).
    pub fn scale_by(&self, x: Var, s: Var) -> Result<Var, TensorError> {
        let sv = self.value(s);
        if sv.numel() != 1 {
            return Err(shape_err(
                "scale_by",
                format!("scale must hold one value, got shape {:?}", sv.shape()),
            ));
        }
        let f = sv.data()[0];
        let value = self.value(x).map(|v| v * f);
        Ok(self.push(value, Op::ScaleBy { x, s }, None, false))
    }

    /// Concatenates `N×Ci×H×W` tensors along the channel axis.
    pub fn concat(&self, parts: &[Var]) -> Result<Var, TensorError> {
        let values: Vec<Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let first = values.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let [n, _, h, w] = first.dims4()?;
        let mut channels = 0;
        for v in &values {
            let [vn, vc, vh, vw] = v.dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(shape_err(
                    "concat",
                    format!("non-channel dims differ: {:?} vs {:?}", first.shape(), v.shape()),
                ));
            }
            channels += vc;
        }
        let mut out = Vec::with_capacity(n * channels * h * w);
        for s in 0..n {
            for v in &values {
                let per = v.numel() / n;
                out.extend_from_slice(&v.data()[s * per..(s + 1) * per]);
            }
        }
        let value = Tensor::from_vec(vec![n, channels, h, w], out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), None, false))
    }

    /// Spatial crop of an `N×C×H×W` value.
    pub fn crop(&self, x: Var, top: usize, left: usize, height: usize, width: usize) -> Result<Var, TensorError> {
        let value = self.value(x).crop(top, left, height, width)?;
        Ok(self.push(value, Op::Crop { x, top, left }, None, false))
    }

    pub fn mean(&self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::from_usize(xv.numel().max(1)).expect("count fits");
        let value = Tensor::scalar(xv.sum() / n);
        self.push(value, Op::Mean(x), None, false)
    }

    pub fn sum(&self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), None, false)
    }

    pub fn abs(&self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        self.push(value, Op::Abs(x), None, false)
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.sqrt());
        self.push(value, Op::Sqrt(x), None, false)
    }

    /// Differentiates a scalar `loss` with respect to every leaf that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients {
            vars: HashMap::new(),
            params: Vec::new(),
        };

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            let mut send = |v: Var, contrib: Vec<T>| accumulate(&mut grads, v, contrib);

            match &node.op {
                Op::Leaf => {
                    let t = Tensor::from_vec(node.value.shape().to_vec(), g)?;
                    match node.param {
                        Some(pid) => out.params.push((pid, t)),
                        None => {
                            out.vars.insert(Var(id), t);
                        }
                    }
                }
                Op::Conv2d { x, w, b, geom } => {
                    if needs(*x) {
                        send(*x, kernels::conv2d_input_grad(&g, val(*w).data(), geom));
                    }
                    if needs(*w) {
                        send(*w, kernels::conv2d_weight_grad(&g, val(*x).data(), geom));
                    }
                    if let Some(b) = b.filter(|&b| needs(b)) {
                        send(b, kernels::channel_sums(&g, geom.n, geom.cout, geom.oh * geom.ow));
                    }
                }
                Op::ConvTranspose2d { x, w, b, geom } => {
                    // geom describes the adjoint convolution output(Cout) -> input(Cin).
                    if needs(*x) {
                        send(*x, kernels::conv2d_forward(&g, val(*w).data(), None, geom));
                    }
                    if needs(*w) {
                        send(*w, kernels::conv2d_weight_grad(val(*x).data(), &g, geom));
                    }
                    if let Some(b) = b.filter(|&b| needs(b)) {
                        send(b, kernels::channel_sums(&g, geom.n, geom.cin, geom.h * geom.w));
                    }
                }
                Op::PixelShuffle(x, r) => {
                    let dims = node.value.dims4()?;
                    send(*x, kernels::pixel_unshuffle(&g, dims, *r));
                }
                Op::PixelUnshuffle(x, r) => {
                    let dims = node.value.dims4()?;
                    send(*x, kernels::pixel_shuffle(&g, dims, *r));
                }
                Op::Relu(x) => {
                    let gx = g
                        .iter()
                        .zip(val(*x).data())
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    send(*x, gx);
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        send(*a, g.clone());
                    }
                    if needs(*b) {
                        send(*b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        send(*a, g.clone());
                    }
                    if needs(*b) {
                        send(*b, g.iter().map(|&v| -v).collect());
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        send(*a, g.iter().zip(val(*b).data()).map(|(&g, &y)| g * y).collect());
                    }
                    if needs(*b) {
                        send(*b, g.iter().zip(val(*a).data()).map(|(&g, &x)| g * x).collect());
                    }
                }
                Op::Scale(x, f) => send(*x, g.iter().map(|&v| v * *f).collect()),
                Op::ScaleBy { x, s } => {
                    if needs(*x) {
                        let f = val(*s).data()[0];
                        send(*x, g.iter().map(|&v| v * f).collect());
                    }
                    if needs(*s) {
                        let ds = g.iter().zip(val(*x).data()).map(|(&g, &x)| g * x).sum();
                        send(*s, vec![ds]);
                    }
                }
                Op::Concat(parts) => {
                    let [n, c, h, w] = node.value.dims4()?;
                    let plane = h * w;
                    let mut offset = 0;
                    for &p in parts {
                        let pc = val(p).dims4()?[1];
                        if needs(p) {
                            let mut gp = Vec::with_capacity(n * pc * plane);
                            for s in 0..n {
                                let start = (s * c + offset) * plane;
                                gp.extend_from_slice(&g[start..start + pc * plane]);
                            }
                            send(p, gp);
                        }
                        offset += pc;
                    }
                }
                Op::Crop { x, top, left } => {
                    let [n, c, h, w] = val(*x).dims4()?;
                    let [_, _, ch, cw] = node.value.dims4()?;
                    let mut gx = vec![T::zero(); n * c * h * w];
                    for (p, rows) in g.chunks_exact(ch * cw).enumerate() {
                        for (y, row) in rows.chunks_exact(cw).enumerate() {
                            let start = p * h * w + (top + y) * w + left;
                            gx[start..start + cw].copy_from_slice(row);
                        }
                    }
                    send(*x, gx);
                }
                Op::Mean(x) => {
                    let len = val(*x).numel();
                    let v = g[0] / T::from_usize(len.max(1)).expect("count fits");
                    send(*x, vec![v; len]);
                }
                Op::Sum(x) => send(*x, vec![g[0]; val(*x).numel()]),
                Op::Abs(x) => {
                    let gx = g
                        .iter()
                        .zip(val(*x).data())
                        .map(|(&g, &v)| {
                            if v > T::zero() {
                                g
                            } else if v < T::zero() {
                                -g
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    send(*x, gx);
                }
                Op::Sqrt(x) => {
                    let two = T::one() + T::one();
                    let gx = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&g, &r)| if r > T::zero() { g / (two * r) } else { T::zero() })
                        .collect();
                    send(*x, gx);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contrib) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn weight_dims<T: Element>(op: &'static str, w: &Tensor<T>) -> Result<[usize; 4], TensorError> {
    w.dims4()
        .map_err(|_| shape_err(op, format!("weight must be rank 4, got shape {:?}", w.shape())))
}

fn check_bias<T: Element>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<(), TensorError> {
    match bias {
        Some(b) if b.numel() != channels => Err(shape_err(
            op,
            format!("bias has {} values but the output has {channels} channels", b.numel()),
        )),
        _ => Ok(()),
    }
}

fn op_inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => {
            let mut v = vec![*x, *w];
            v.extend(b.iter().copied());
            v
        }
        Op::PixelShuffle(x, _)
        | Op::PixelUnshuffle(x, _)
        | Op::Relu(x)
        | Op::Scale(x, _)
        | Op::Mean(x)
        | Op::Sum(x)
        | Op::Abs(x)
        | Op::Sqrt(x)
        | Op::Crop { x, .. } => vec![*x],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::ScaleBy { x, s } => vec![*x, *s],
        Op::Concat(parts) => parts.clone(),
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::ConvTranspose2d { .. } => "conv_transpose2d",
        Op::PixelShuffle(..) => "pixel_shuffle",
        Op::PixelUnshuffle(..) => "pixel_unshuffle",
        Op::Relu(_) => "relu",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::ScaleBy { .. } => "scale_by",
        Op::Concat(_) => "concat",
        Op::Crop { .. } => "crop",
        Op::Mean(_) => "mean",
        Op::Sum(_) => "sum",
        Op::Abs(_) => "abs",
        Op::Sqrt(_) => "sqrt",
    }
}

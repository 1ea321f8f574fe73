#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srlab_core::imaging::sobel_on_tape;
use srlab_core::tensor::{Tape, Tensor, TensorError, Var};
use srlab_core::train::{edge_loss, l1_loss};

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-5;
pub const CASES: usize = 20;

/// Relative error with a small floor so that vanishing gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values with magnitude in [0.1, 1], away from the kinks of relu and abs.
pub fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape).map(|v| v.signum() * (0.1 + 0.9 * v.abs()))
}

pub fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape).map(|v| 1.25 + 0.75 * v)
}

type Build<'a> = dyn Fn(&Tape<f64>, &[Var]) -> Result<Var, TensorError> + 'a;

fn project(tape: &Tape<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var, TensorError> {
    let w = tape.constant(weights.clone());
    Ok(tape.sum(tape.mul(y, w)?))
}

/// Compares reverse-mode gradients of `<f(inputs), r>` for a random `r`
/// against central differences on every input element; returns the worst
/// relative error.
pub fn check_case(inputs: &[Tensor<f64>], f: &Build<'_>, seed: u64) -> Result<f64, TensorError> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let y = f(&tape, &vars)?;
    let weights = uniform(&mut rng(seed ^ 0x5eed), &tape.shape(y));
    let loss = project(&tape, y, &weights)?;
    let grads = tape.backward(loss)?;

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let tape = Tape::no_grad();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&tape, &vars)?;
        Ok(tape.value(project(&tape, y, &weights)?).data()[0])
    };
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).expect("input gradient").clone();
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x0 - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// One differentiable op under test: a name and a generator of random cases.
pub struct OpCase {
    pub name: &'static str,
    pub make: fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>),
}

fn pick(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn conv_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let (n, cin, cout) = (pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 3));
    let k = pick(r, 1, 3);
    let stride = pick(r, 1, 2);
    let padding = pick(r, 0, k - 1);
    let (h, w) = (pick(r, k, 6), pick(r, k, 6));
    let inputs = vec![uniform(r, &[n, cin, h, w]), uniform(r, &[cout, cin, k, k]), uniform(r, &[cout])];
    (inputs, Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, padding)))
}

fn conv_t_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let (n, cin, cout) = (pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 3));
    let k = pick(r, 1, 4);
    let stride = pick(r, 1, 3);
    let padding = pick(r, 0, (k - 1) / 2);
    let (h, w) = (pick(r, 1, 4), pick(r, 1, 4));
    let inputs = vec![uniform(r, &[n, cin, h, w]), uniform(r, &[cin, cout, k, k]), uniform(r, &[cout])];
    (inputs, Box::new(move |t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), stride, padding)))
}

fn shuffle_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let f = pick(r, 1, 3);
    let c = pick(r, 1, 2) * f * f;
    let shape = [pick(r, 1, 2), c, pick(r, 1, 3), pick(r, 1, 3)];
    let inputs = vec![uniform(r, &shape)];
    (inputs, Box::new(move |t, v| t.pixel_shuffle(v[0], f)))
}

fn unshuffle_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let f = pick(r, 1, 3);
    let shape = [pick(r, 1, 2), pick(r, 1, 3), f * pick(r, 1, 3), f * pick(r, 1, 3)];
    let inputs = vec![uniform(r, &shape)];
    (inputs, Box::new(move |t, v| t.pixel_unshuffle(v[0], f)))
}

fn shape4(r: &mut ChaCha8Rng) -> [usize; 4] {
    [pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 5), pick(r, 1, 5)]
}

fn relu_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    (vec![off_zero(r, &s)], Box::new(|t, v| Ok(t.relu(v[0]))))
}

fn add_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    (vec![uniform(r, &s), uniform(r, &s)], Box::new(|t, v| t.add(v[0], v[1])))
}

fn sub_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    (vec![uniform(r, &s), uniform(r, &s)], Box::new(|t, v| t.sub(v[0], v[1])))
}

fn mul_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    (vec![uniform(r, &s), uniform(r, &s)], Box::new(|t, v| t.mul(v[0], v[1])))
}

fn scale_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    let factor: f64 = r.random_range(-3.0..3.0);
    (vec![uniform(r, &s)], Box::new(move |t, v| Ok(t.scale(v[0], factor))))
}

fn scale_by_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    (vec![uniform(r, &s), uniform(r, &[1])], Box::new(|t, v| t.scale_by(v[0], v[1])))
}

fn concat_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let [n, _, h, w] = shape4(r);
    let parts = pick(r, 1, 3);
    let inputs = (0..parts)
        .map(|_| {
            let c = pick(r, 1, 3);
            uniform(r, &[n, c, h, w])
        })
        .collect();
    (inputs, Box::new(|t, v| t.concat(v)))
}

fn crop_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    let (top, left) = (pick(r, 0, s[2] - 1), pick(r, 0, s[3] - 1));
    let (h, w) = (pick(r, 1, s[2] - top), pick(r, 1, s[3] - left));
    (vec![uniform(r, &s)], Box::new(move |t, v| t.crop(v[0], top, left, h, w)))
}

fn mean_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    (vec![uniform(r, &s)], Box::new(|t, v| Ok(t.mean(v[0]))))
}

fn sum_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    (vec![uniform(r, &s)], Box::new(|t, v| Ok(t.sum(v[0]))))
}

fn abs_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    (vec![off_zero(r, &s)], Box::new(|t, v| Ok(t.abs(v[0]))))
}

fn sqrt_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    (vec![positive(r, &s)], Box::new(|t, v| Ok(t.sqrt(v[0]))))
}

fn sobel_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = [pick(r, 1, 2), pick(r, 1, 3), pick(r, 2, 5), pick(r, 2, 5)];
    (vec![uniform(r, &s)], Box::new(|t, v| sobel_on_tape(t, v[0])))
}

fn l1_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = shape4(r);
    let a = uniform(r, &s);
    let b = a.zip_map(&off_zero(r, &s), |x, d| x + d).unwrap();
    (vec![a, b], Box::new(|t, v| l1_loss(t, v[0], v[1])))
}

fn edge_case(r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) {
    let s = [1, pick(r, 1, 3), pick(r, 2, 5), pick(r, 2, 5)];
    (vec![uniform(r, &s), uniform(r, &s)], Box::new(|t, v| edge_loss(t, v[0], v[1])))
}

pub const OPS: &[OpCase] = &[
    OpCase { name: "conv2d", make: conv_case },
    OpCase { name: "conv_transpose2d", make: conv_t_case },
    OpCase { name: "pixel_shuffle", make: shuffle_case },
    OpCase { name: "pixel_unshuffle", make: unshuffle_case },
    OpCase { name: "relu", make: relu_case },
    OpCase { name: "add", make: add_case },
    OpCase { name: "sub", make: sub_case },
    OpCase { name: "mul", make: mul_case },
    OpCase { name: "scale", make: scale_case },
    OpCase { name: "scale_by", make: scale_by_case },
    OpCase { name: "concat", make: concat_case },
    OpCase { name: "crop", make: crop_case },
    OpCase { name: "mean", make: mean_case },
    OpCase { name: "sum", make: sum_case },
    OpCase { name: "abs", make: abs_case },
    OpCase { name: "sqrt", make: sqrt_case },
    OpCase { name: "sobel", make: sobel_case },
    OpCase { name: "l1_loss", make: l1_case },
    OpCase { name: "edge_loss", make: edge_case },
];

/// Worst relative error of `op` over `cases` random cases.
pub fn check_op(op: &OpCase, cases: usize) -> f64 {
    let mut r = rng(op.name.bytes().fold(17u64, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b))));
    (0..cases)
        .map(|i| {
            let (inputs, f) = (op.make)(&mut r);
            check_case(&inputs, f.as_ref(), i as u64).unwrap_or_else(|e| panic!("{} case {i}: {e}", op.name))
        })
        .fold(0.0, f64::max)
}

/// `<conv2d(x), y>` against `<x, conv_transpose2d(y)>` with shared weights, relative gap.
pub fn adjoint_gap(r: &mut ChaCha8Rng) -> f64 {
    let (n, cin, cout) = (pick(r, 1, 2), pick(r, 1, 4), pick(r, 1, 4));
    let k = pick(r, 1, 5);
    let stride = pick(r, 1, 3);
    let padding = pick(r, 0, k - 1);
    // input extents for which the transposed output size lands back on the input
    let steps_h = pick(r, 0, 4);
    let steps_w = pick(r, 0, 4);
    let h = (steps_h * stride + k).saturating_sub(2 * padding).max(1);
    let w = (steps_w * stride + k).saturating_sub(2 * padding).max(1);
    if h + 2 * padding < k || w + 2 * padding < k || (h + 2 * padding - k) % stride != 0 || (w + 2 * padding - k) % stride != 0 {
        return adjoint_gap(r);
    }
    let x = uniform(r, &[n, cin, h, w]);
    let wt = uniform(r, &[cout, cin, k, k]);
    let tape = Tape::<f64>::no_grad();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(wt));
    let ax = tape.value(tape.conv2d(xv, wv, None, stride, padding).unwrap());
    let y = uniform(r, ax.shape());
    let aty = tape.value(tape.conv_transpose2d(tape.constant(y.clone()), wv, None, stride, padding).unwrap());
    assert_eq!(aty.shape(), x.shape());
    let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
    let (lhs, rhs) = (dot(&ax, &y), dot(&x, &aty));
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
}

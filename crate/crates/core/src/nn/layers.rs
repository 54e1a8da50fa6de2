//! Forward and backward passes for the supported layer kinds.
//!
//! Strided convolutions work on a polyphase split of their input: plane
//! `(py, px)` holds rows `py, py+s, ...` and columns `px, px+s, ...`, so
//! every inner loop walks contiguous memory for any stride.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use super::arch::{LayerSpec, Shape};
use super::model::{LayerParams, Params};
use crate::error::{Error, Result};

pub trait Real: Float + Sum + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("representable")
    }
    fn to_f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense (channels, height, width) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Shape,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.0 * shape.1 * shape.2],
        }
    }

    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.0 * shape.1 * shape.2 {
            return Err(Error::ArchitectureMismatch(format!(
                "tensor {shape:?} needs {} values, got {}",
                shape.0 * shape.1 * shape.2,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Dot product with eight fixed accumulation lanes; the summation order is
/// part of the result, so it is fixed here rather than left to the caller.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let (ca, cb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for k in 0..8 {
            lanes[k] = lanes[k] + ca[k] * cb[k];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail = tail + a[i] * b[i];
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail
}

#[inline]
fn sum<T: Real>(a: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for k in 0..8 {
            lanes[k] = lanes[k] + a[i * 8 + k];
        }
    }
    let mut tail = T::zero();
    for &v in &a[chunks * 8..] {
        tail = tail + v;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail
}

/// Polyphase split of a (C, H, W) tensor for stride `s`.
#[derive(Debug, Clone)]
struct Phased<T> {
    stride: usize,
    channels: usize,
    heights: Vec<usize>,
    widths: Vec<usize>,
    planes: Vec<Vec<T>>,
}

impl<T: Real> Phased<T> {
    fn dims(len: usize, s: usize) -> Vec<usize> {
        (0..s).map(|p| if p < len { (len - p).div_ceil(s) } else { 0 }).collect()
    }

    fn zeros(shape: Shape, s: usize) -> Self {
        let heights = Self::dims(shape.1, s);
        let widths = Self::dims(shape.2, s);
        let planes = (0..s * s)
            .map(|i| vec![T::zero(); shape.0 * heights[i / s] * widths[i % s]])
            .collect();
        Self {
            stride: s,
            channels: shape.0,
            heights,
            widths,
            planes,
        }
    }

    fn split(t: &Tensor<T>, s: usize) -> Self {
        let mut out = Self::zeros(t.shape, s);
        let (c, h, w) = t.shape;
        for py in 0..s {
            for px in 0..s {
                let (ph, pw) = (out.heights[py], out.widths[px]);
                let plane = &mut out.planes[py * s + px];
                for ch in 0..c {
                    for r in 0..ph {
                        let src = &t.data[(ch * h + r * s + py) * w..][..w];
                        let dst = &mut plane[(ch * ph + r) * pw..][..pw];
                        for (k, d) in dst.iter_mut().enumerate() {
                            *d = src[k * s + px];
                        }
                    }
                }
            }
        }
        out
    }

    fn merge(&self, shape: Shape) -> Tensor<T> {
        let s = self.stride;
        let (c, h, w) = shape;
        let mut t = Tensor::zeros(shape);
        for py in 0..s {
            for px in 0..s {
                let (ph, pw) = (self.heights[py], self.widths[px]);
                let plane = &self.planes[py * s + px];
                for ch in 0..c {
                    for r in 0..ph {
                        let dst = &mut t.data[(ch * h + r * s + py) * w..][..w];
                        let src = &plane[(ch * ph + r) * pw..][..pw];
                        for (k, &v) in src.iter().enumerate() {
                            dst[k * s + px] = v;
                        }
                    }
                }
            }
        }
        t
    }

    #[inline]
    fn row(&self, ky: usize, kx: usize, ch: usize, r: usize) -> &[T] {
        let s = self.stride;
        let (py, px) = (ky % s, kx % s);
        let (ph, pw) = (self.heights[py], self.widths[px]);
        debug_assert!(ch < self.channels);
        &self.planes[py * s + px][(ch * ph + r + ky / s) * pw + kx / s..]
    }

    #[inline]
    fn row_mut(&mut self, ky: usize, kx: usize, ch: usize, r: usize) -> &mut [T] {
        let s = self.stride;
        let (py, px) = (ky % s, kx % s);
        let (ph, pw) = (self.heights[py], self.widths[px]);
        &mut self.planes[py * s + px][(ch * ph + r + ky / s) * pw + kx / s..]
    }
}

/// Per-layer values kept for the backward pass.
#[derive(Debug, Clone)]
enum Saved<T> {
    Conv(Phased<T>),
    Relu,
    MaxPool(Vec<u32>),
    GlobalAvgPool,
    Dense(Vec<T>),
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    saved: Vec<Saved<T>>,
    outputs: Vec<Tensor<T>>,
    input_shape: Shape,
}

impl<T: Real> Trace<T> {
    /// Output of every layer, in order.
    pub fn outputs(&self) -> &[Tensor<T>] {
        &self.outputs
    }

    pub fn logits(&self) -> [T; 2] {
        let last = &self.outputs.last().expect("non-empty network").data;
        [last[0], last[1]]
    }
}

fn conv_forward<T: Real>(x: &Tensor<T>, spec: &LayerSpec, p: &LayerParams<T>, out_shape: Shape) -> (Tensor<T>, Phased<T>) {
    let LayerSpec::Conv {
        in_channels,
        out_channels,
        kernel,
        stride,
    } = *spec
    else {
        unreachable!()
    };
    let phased = Phased::split(x, stride);
    let (_, oh, ow) = out_shape;
    let mut out = Tensor::zeros(out_shape);
    for o in 0..out_channels {
        let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(p.bias[o]);
        for c in 0..in_channels {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let w = p.weight[((o * in_channels + c) * kernel + ky) * kernel + kx];
                    for r in 0..oh {
                        axpy(&mut plane[r * ow..(r + 1) * ow], w, &phased.row(ky, kx, c, r)[..ow]);
                    }
                }
            }
        }
    }
    (out, phased)
}

fn conv_backward<T: Real>(
    dout: &Tensor<T>,
    spec: &LayerSpec,
    p: &LayerParams<T>,
    phased: &Phased<T>,
    in_shape: Shape,
    grad: &mut LayerParams<T>,
    need_input: bool,
) -> Option<Tensor<T>> {
    let LayerSpec::Conv {
        in_channels,
        out_channels,
        kernel,
        stride,
    } = *spec
    else {
        unreachable!()
    };
    let (_, oh, ow) = dout.shape;
    let mut dphased = need_input.then(|| Phased::zeros(in_shape, stride));
    for o in 0..out_channels {
        let dplane = &dout.data[o * oh * ow..(o + 1) * oh * ow];
        grad.bias[o] = grad.bias[o] + sum(dplane);
        for c in 0..in_channels {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wi = ((o * in_channels + c) * kernel + ky) * kernel + kx;
                    let mut acc = T::zero();
                    for r in 0..oh {
                        acc = acc + dot(&dplane[r * ow..(r + 1) * ow], &phased.row(ky, kx, c, r)[..ow]);
                    }
                    grad.weight[wi] = grad.weight[wi] + acc;
                    if let Some(dp) = dphased.as_mut() {
                        let w = p.weight[wi];
                        for r in 0..oh {
                            axpy(&mut dp.row_mut(ky, kx, c, r)[..ow], w, &dplane[r * ow..(r + 1) * ow]);
                        }
                    }
                }
            }
        }
    }
    dphased.map(|dp| dp.merge(in_shape))
}

fn maxpool_forward<T: Real>(x: &Tensor<T>, size: usize, out_shape: Shape) -> (Tensor<T>, Vec<u32>) {
    let (c, h, w) = x.shape;
    let (_, oh, ow) = out_shape;
    let mut out = Tensor::zeros(out_shape);
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        for r in 0..oh {
            for col in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = (ch * h + r * size + dy) * w + col * size + dx;
                        if x.data[idx] > best {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (ch * oh + r) * ow + col;
                out.data[o] = best;
                arg[o] = best_idx as u32;
            }
        }
    }
    (out, arg)
}

/// Runs the network and keeps what backpropagation needs.
pub fn forward_trace<T: Real>(params: &Params<T>, input: &Tensor<T>) -> Result<Trace<T>> {
    let shapes = params.shapes();
    if input.shape != shapes[0] {
        return Err(Error::ArchitectureMismatch(format!(
            "input shape {:?} does not match model input {:?}",
            input.shape, shapes[0]
        )));
    }
    let mut saved = Vec::with_capacity(params.arch.layers.len());
    let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(params.arch.layers.len());
    for (i, spec) in params.arch.layers.iter().enumerate() {
        let x = if i == 0 { input } else { &outputs[i - 1] };
        let out_shape = shapes[i + 1];
        let (y, s) = match *spec {
            LayerSpec::Conv { .. } => {
                let (y, ph) = conv_forward(x, spec, &params.layers[i], out_shape);
                (y, Saved::Conv(ph))
            }
            LayerSpec::Relu => {
                let data = x.data.iter().map(|&v| v.max(T::zero())).collect();
                (Tensor { shape: out_shape, data }, Saved::Relu)
            }
            LayerSpec::MaxPool { size } => {
                let (y, arg) = maxpool_forward(x, size, out_shape);
                (y, Saved::MaxPool(arg))
            }
            LayerSpec::GlobalAvgPool => {
                let (c, h, w) = x.shape;
                let inv = T::one() / T::from_f64((h * w) as f64);
                let data = (0..c).map(|ch| sum(&x.data[ch * h * w..(ch + 1) * h * w]) * inv).collect();
                (Tensor { shape: out_shape, data }, Saved::GlobalAvgPool)
            }
            LayerSpec::Dense { inputs, outputs: n } => {
                let p = &params.layers[i];
                let data = (0..n)
                    .map(|j| p.bias[j] + dot(&p.weight[j * inputs..(j + 1) * inputs], &x.data))
                    .collect();
                (Tensor { shape: out_shape, data }, Saved::Dense(x.data.clone()))
            }
        };
        outputs.push(y);
        saved.push(s);
    }
    Ok(Trace {
        saved,
        outputs,
        input_shape: input.shape,
    })
}

/// Backpropagates `dlogits` and accumulates parameter gradients into
/// `grads`. The input gradient is only computed when `want_input` is set.
pub fn backward<T: Real>(
    params: &Params<T>,
    trace: &Trace<T>,
    dlogits: [T; 2],
    grads: &mut Params<T>,
    want_input: bool,
) -> Option<Tensor<T>> {
    let mut d = Tensor {
        shape: (2, 1, 1),
        data: dlogits.to_vec(),
    };
    for i in (0..params.arch.layers.len()).rev() {
        let spec = &params.arch.layers[i];
        let in_shape = if i == 0 {
            trace.input_shape
        } else {
            trace.outputs[i - 1].shape
        };
        let need_input = i > 0 || want_input;
        d = match (&trace.saved[i], *spec) {
            (Saved::Conv(ph), LayerSpec::Conv { .. }) => {
                conv_backward(&d, spec, &params.layers[i], ph, in_shape, &mut grads.layers[i], need_input)?
            }
            (Saved::Relu, LayerSpec::Relu) => {
                let out = &trace.outputs[i].data;
                let data = d
                    .data
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect();
                Tensor { shape: in_shape, data }
            }
            (Saved::MaxPool(arg), LayerSpec::MaxPool { .. }) => {
                let mut t = Tensor::zeros(in_shape);
                for (&g, &idx) in d.data.iter().zip(arg) {
                    t.data[idx as usize] = t.data[idx as usize] + g;
                }
                t
            }
            (Saved::GlobalAvgPool, LayerSpec::GlobalAvgPool) => {
                let (c, h, w) = in_shape;
                let inv = T::one() / T::from_f64((h * w) as f64);
                let mut t = Tensor::zeros(in_shape);
                for ch in 0..c {
                    t.data[ch * h * w..(ch + 1) * h * w].fill(d.data[ch] * inv);
                }
                t
            }
            (Saved::Dense(x), LayerSpec::Dense { inputs, outputs }) => {
                let p = &params.layers[i];
                let g = &mut grads.layers[i];
                let mut dx = vec![T::zero(); inputs];
                for j in 0..outputs {
                    let dj = d.data[j];
                    g.bias[j] = g.bias[j] + dj;
                    axpy(&mut g.weight[j * inputs..(j + 1) * inputs], dj, x);
                    if need_input {
                        axpy(&mut dx, dj, &p.weight[j * inputs..(j + 1) * inputs]);
                    }
                }
                if !need_input {
                    return None;
                }
                Tensor { shape: in_shape, data: dx }
            }
            _ => unreachable!("trace built from the same architecture"),
        };
    }
    Some(d)
}

/// Numerically stable softmax of a logit pair.
pub fn softmax<T: Real>(logits: [T; 2]) -> [T; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Cross-entropy of a logit pair against class `target`, and its gradient
/// with respect to the logits.
pub fn cross_entropy<T: Real>(logits: [T; 2], target: usize) -> (T, [T; 2]) {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    let loss = lse - logits[target];
    let p = softmax(logits);
    let mut g = p;
    g[target] = g[target] - T::one();
    (loss, g)
}

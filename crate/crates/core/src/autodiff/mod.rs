//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass as a node in
//! topological order. [`Tape::backward`] walks the nodes in reverse,
//! summing each node's incoming gradient over all of its consumers before
//! propagating it to its parents, and consumes the tape.
//!
//! ```
//! use uqshift::autodiff::Tape;
//! use uqshift::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let theta = tape.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = tape.mul(theta, theta).unwrap();
//! let half = tape.scale(sq, 0.5);
//! let loss = tape.sum(half);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(theta).unwrap().data(), &[1.0, -2.0, 0.5]);
//! ```

pub mod check;
pub(crate) mod kernels;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::{col2im, gemm, im2col, ConvGeometry};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    AddChannelBias {
        x: Var,
        bias: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
    Relu {
        x: Var,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        x: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Softmax {
        x: Var,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation tape; rebuilt for every forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; `None` for constants or nodes the
    /// loss does not depend on.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but yields zeros of the right length for
    /// unreached nodes.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        match self.get(var) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; len],
        }
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{what}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (m, k, k2, n) = match (sa, sb) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            _ => return Err(shape_err("matmul", sa, sb)),
        };
        if k != k2 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// 2-D cross-correlation of `input [Cin×H×W]` with `kernel [Cout×Cin×kh×kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (cin, h, w) = self.value(input).chw()?;
        let ks = self.value(kernel).shape();
        let (cout, kcin, kh, kw) = match ks {
            [a, b, c, d] => (*a, *b, *c, *d),
            _ => return Err(shape_err("conv2d", &[cin, h, w], ks)),
        };
        if kcin != cin {
            return Err(shape_err("conv2d channels", &[cin, h, w], ks));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Dimension(format!(
                "conv2d kernel must be odd-sized, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be >= 1".into()));
        }
        let span_h = (h + 2 * padding)
            .checked_sub(kh)
            .ok_or_else(|| Error::Dimension("conv2d kernel taller than padded input".into()))?;
        let span_w = (w + 2 * padding)
            .checked_sub(kw)
            .ok_or_else(|| Error::Dimension("conv2d kernel wider than padded input".into()))?;
        if span_h % stride != 0 || span_w % stride != 0 {
            return Err(Error::Dimension(format!(
                "conv2d output size is not an integer for H={h}, W={w}, k={kh}x{kw}, stride={stride}, padding={padding}"
            )));
        }
        let geom = ConvGeometry {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            out_h: span_h / stride + 1,
            out_w: span_w / stride + 1,
        };
        let cols = im2col(self.value(input).data(), &geom);
        let mut out = vec![0.0; cout * geom.out_len()];
        gemm(
            cout,
            geom.patch_len(),
            geom.out_len(),
            self.value(kernel).data(),
            false,
            &cols,
            false,
            &mut out,
            false,
        );
        let rg = self.requires_grad(input) || self.requires_grad(kernel);
        let value = Tensor::new(vec![cout, geom.out_h, geom.out_w], out)?;
        let op = Op::Conv2d {
            input,
            kernel,
            geom,
            cols: if self.requires_grad(kernel) { cols } else { Vec::new() },
        };
        Ok(self.push(value, op, rg))
    }

    /// Adds `bias [C]` to every pixel of channel `c` of `x [C×H×W]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if self.value(bias).shape() != [c] {
            return Err(shape_err("add_channel_bias", &[c, h, w], self.value(bias).shape()));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for (ch, plane) in out.chunks_mut(h * w).enumerate() {
            plane.iter_mut().for_each(|v| *v += b[ch]);
        }
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        let value = Tensor::new(vec![c, h, w], out)?;
        Ok(self.push(value, Op::AddChannelBias { x, bias }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.requires_grad(x);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.requires_grad(x);
        self.push(value, Op::Sum { x }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.requires_grad(x);
        self.push(value, Op::Relu { x }, rg)
    }

    /// 2×2 max pooling with stride 2 over `[C×H×W]`.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!(
                "max_pool2 needs even spatial dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.requires_grad(x);
        let value = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Nearest-neighbour 2× upsampling over `[C×H×W]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let src = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[(ch * oh + oy) * ow + ox] = src[(ch * h + oy / 2) * w + ox / 2];
                }
            }
        }
        let rg = self.requires_grad(x);
        let value = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(value, Op::Upsample2 { x }, rg))
    }

    /// Stacks `a [Ca×H×W]` and `b [Cb×H×W]` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(shape_err("concat_channels", self.value(a).shape(), self.value(b).shape()));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let value = Tensor::new(vec![ca + cb, ha, wa], data)?;
        Ok(self.push(value, Op::ConcatChannels { a, b }, rg))
    }

    /// Inverted dropout. With `active == false` or `rate == 0` this is the
    /// identity and consumes no randomness.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, active: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Validation(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !active || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    /// Softmax over the leading (class) axis; remaining axes index pixels.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let classes = t.shape()[0];
        if classes < 2 || t.ndim() < 2 {
            return Err(Error::Dimension(format!(
                "softmax needs [C, ...] with C >= 2, got {:?}",
                t.shape()
            )));
        }
        let probs = softmax_columns(t.data(), classes);
        let value = Tensor::new(t.shape().to_vec(), probs)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Softmax { x }, rg))
    }

    /// Mean over pixels of `-ln p[label]` for class probabilities `[C, ...]`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        let (classes, pixels) = class_layout(t, labels.len())?;
        check_labels(labels, classes)?;
        let p = t.data();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -p[l * pixels + i].ln())
            .sum::<f64>()
            / pixels as f64;
        let rg = self.requires_grad(probs);
        let op = Op::CrossEntropy {
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Fused, numerically stable softmax + cross-entropy on logits `[C, ...]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (classes, pixels) = class_layout(t, labels.len())?;
        if classes < 2 {
            return Err(Error::Dimension("softmax_cross_entropy needs C >= 2".into()));
        }
        check_labels(labels, classes)?;
        let z = t.data();
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let max = (0..classes).map(|c| z[c * pixels + i]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..classes).map(|c| (z[c * pixels + i] - max).exp()).sum::<f64>().ln();
            loss += lse - z[l * pixels + i];
        }
        loss /= pixels as f64;
        let probs = softmax_columns(z, classes);
        let rg = self.requires_grad(logits);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Back-propagates from the scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = Accumulator {
                nodes: &nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    if let Some(slot) = acc.slot(*a) {
                        gemm(m, n, k, &g, false, nodes[b.0].value.data(), true, slot, true);
                    }
                    if let Some(slot) = acc.slot(*b) {
                        gemm(k, m, n, nodes[a.0].value.data(), true, &g, false, slot, true);
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    geom,
                    cols,
                } => {
                    let cout = nodes[kernel.0].value.shape()[0];
                    if let Some(slot) = acc.slot(*kernel) {
                        gemm(cout, geom.out_len(), geom.patch_len(), &g, false, cols, true, slot, true);
                    }
                    if nodes[input.0].requires_grad {
                        let mut dcols = vec![0.0; geom.patch_len() * geom.out_len()];
                        gemm(
                            geom.patch_len(),
                            cout,
                            geom.out_len(),
                            nodes[kernel.0].value.data(),
                            true,
                            &g,
                            false,
                            &mut dcols,
                            false,
                        );
                        if let Some(slot) = acc.slot(*input) {
                            col2im(&dcols, geom, slot);
                        }
                    }
                }
                Op::AddChannelBias { x, bias } => {
                    let c = nodes[bias.0].value.len();
                    let plane = g.len() / c;
                    if let Some(slot) = acc.slot(*bias) {
                        for (ch, s) in slot.iter_mut().enumerate() {
                            *s += g[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                        }
                    }
                    acc.add(*x, &g);
                }
                Op::Add { a, b } => {
                    acc.add(*a, &g);
                    acc.add(*b, &g);
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(slot) = acc.slot(*a) {
                        slot.iter_mut().zip(g.iter().zip(vb)).for_each(|(s, (gi, y))| *s += gi * y);
                    }
                    if let Some(slot) = acc.slot(*b) {
                        slot.iter_mut().zip(g.iter().zip(va)).for_each(|(s, (gi, x))| *s += gi * x);
                    }
                }
                Op::Scale { x, factor } => {
                    if let Some(slot) = acc.slot(*x) {
                        slot.iter_mut().zip(&g).for_each(|(s, gi)| *s += gi * factor);
                    }
                }
                Op::Sum { x } => {
                    if let Some(slot) = acc.slot(*x) {
                        slot.iter_mut().for_each(|s| *s += g[0]);
                    }
                }
                Op::Relu { x } => {
                    let v = nodes[x.0].value.data();
                    if let Some(slot) = acc.slot(*x) {
                        for ((s, gi), xi) in slot.iter_mut().zip(&g).zip(v) {
                            if *xi > 0.0 {
                                *s += gi;
                            }
                        }
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    if let Some(slot) = acc.slot(*x) {
                        for (gi, &idx) in g.iter().zip(argmax) {
                            slot[idx] += gi;
                        }
                    }
                }
                Op::Upsample2 { x } => {
                    let (c, h, w) = nodes[x.0].value.chw()?;
                    let (oh, ow) = (2 * h, 2 * w);
                    if let Some(slot) = acc.slot(*x) {
                        for ch in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    slot[(ch * h + oy / 2) * w + ox / 2] += g[(ch * oh + oy) * ow + ox];
                                }
                            }
                        }
                    }
                }
                Op::ConcatChannels { a, b } => {
                    let split = nodes[a.0].value.len();
                    acc.add(*a, &g[..split]);
                    acc.add(*b, &g[split..]);
                }
                Op::Dropout { x, mask } => {
                    if let Some(slot) = acc.slot(*x) {
                        slot.iter_mut().zip(g.iter().zip(mask)).for_each(|(s, (gi, m))| *s += gi * m);
                    }
                }
                Op::Softmax { x } => {
                    let p = node.value.data();
                    let classes = node.value.shape()[0];
                    let pixels = p.len() / classes;
                    if let Some(slot) = acc.slot(*x) {
                        for i in 0..pixels {
                            let dot: f64 = (0..classes).map(|c| p[c * pixels + i] * g[c * pixels + i]).sum();
                            for c in 0..classes {
                                let j = c * pixels + i;
                                slot[j] += p[j] * (g[j] - dot);
                            }
                        }
                    }
                }
                Op::CrossEntropy { probs, labels } => {
                    let p = nodes[probs.0].value.data();
                    let pixels = labels.len();
                    let scale = g[0] / pixels as f64;
                    if let Some(slot) = acc.slot(*probs) {
                        for (i, &l) in labels.iter().enumerate() {
                            let j = l * pixels + i;
                            slot[j] -= scale / p[j];
                        }
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let pixels = labels.len();
                    let scale = g[0] / pixels as f64;
                    if let Some(slot) = acc.slot(*logits) {
                        slot.iter_mut().zip(probs).for_each(|(s, p)| *s += scale * p);
                        for (i, &l) in labels.iter().enumerate() {
                            slot[l * pixels + i] -= scale;
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|d| Tensor::new(node.value.shape().to_vec(), d).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }
}

struct Accumulator<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl Accumulator<'_> {
    /// Zero-initialised gradient buffer of `var`, or `None` for constants.
    fn slot(&mut self, var: Var) -> Option<&mut [f64]> {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            self.grads[var.0]
                .get_or_insert_with(|| vec![0.0; node.value.len()])
                .as_mut_slice(),
        )
    }

    fn add(&mut self, var: Var, g: &[f64]) {
        if let Some(slot) = self.slot(var) {
            slot.iter_mut().zip(g).for_each(|(s, gi)| *s += gi);
        }
    }
}

fn class_layout(t: &Tensor, num_labels: usize) -> Result<(usize, usize)> {
    let classes = t.shape()[0];
    let pixels = t.len() / classes;
    if t.ndim() < 2 || pixels != num_labels {
        return Err(Error::Dimension(format!(
            "class tensor {:?} does not match {num_labels} labels",
            t.shape()
        )));
    }
    Ok((classes, pixels))
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(l) => Err(Error::Validation(format!(
            "label {l} out of range for {classes} classes"
        ))),
        None => Ok(()),
    }
}

/// Max-subtracted softmax over the leading axis of a `[C × pixels]` buffer.
pub fn softmax_columns(z: &[f64], classes: usize) -> Vec<f64> {
    let pixels = z.len() / classes;
    let mut out = vec![0.0; z.len()];
    for i in 0..pixels {
        let max = (0..classes).map(|c| z[c * pixels + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in 0..classes {
            let e = (z[c * pixels + i] - max).exp();
            out[c * pixels + i] = e;
            total += e;
        }
        for c in 0..classes {
            out[c * pixels + i] /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests;

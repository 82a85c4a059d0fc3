//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Graph`], so node order is already a
//! topological order. [`Graph::backward`] walks the nodes in reverse and
//! accumulates `∂loss/∂leaf` into each leaf that was created with
//! `requires_grad`. Leaf gradients accumulate across calls until
//! [`Graph::zero_grad`] is used.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use super::kernels::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A user-supplied elementwise function with its derivative.
///
/// `derivative` receives the input and the forward output.
pub trait ElementwiseRule: Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64, y: f64) -> f64;

    /// Which smooth piece of the function `x` lies on. Rules with kinks
    /// should return distinct values on either side so gradient checks can
    /// tell when a finite-difference step straddles one.
    fn piece(&self, _x: f64) -> u8 {
        0
    }
}

/// Local response normalisation constants.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrnParams {
    pub depth_radius: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            depth_radius: 2,
            k: 2.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

enum Op {
    Leaf,
    Relu(Var),
    Tanh(Var),
    Map(Var, Arc<dyn ElementwiseRule>),
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geometry: ConvGeometry,
        cols: Vec<f64>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Lrn {
        input: Var,
        params: LrnParams,
        denom: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    TriplePool {
        input: Var,
        rows: usize,
        len: usize,
        argmax: Vec<usize>,
        argmin: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Map(_, rule) => rule.name(),
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Reshape(_) => "reshape",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Lrn { .. } => "lrn",
            Op::Concat { .. } => "concat",
            Op::Softmax(_) => "softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::TriplePool { .. } => "triple_pool",
        }
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
}

/// A computation graph recorded during a forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(
                self.nodes
                    .iter()
                    .map(|n| (n.op.name(), n.value.shape().to_vec())),
            )
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Leaves with `requires_grad` get a zeroed gradient slot.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| Tensor::zeros(value.shape()));
        self.nodes.push(Node {
            value,
            requires_grad,
            grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf; `None` for constants and op outputs.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Hash of every branch decision taken by non-smooth ops: ReLU signs,
    /// pooling winners, and custom rule pieces. Two evaluations with equal
    /// signatures lie on the same smooth piece of the recorded function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) => {
                    i.hash(&mut h);
                    for &v in self.value(*x).data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::Map(x, rule) => {
                    i.hash(&mut h);
                    for &v in self.value(*x).data() {
                        rule.piece(v).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => (i, argmax).hash(&mut h),
                Op::TriplePool { argmax, argmin, .. } => (i, argmax, argmin).hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.data_mut().fill(0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn map_values(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map_values(x, |v| v.max(0.0));
        self.push(out, &[x], Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map_values(x, f64::tanh);
        self.push(out, &[x], Op::Tanh(x))
    }

    /// Applies a custom elementwise rule.
    pub fn map(&mut self, x: Var, rule: Arc<dyn ElementwiseRule>) -> Var {
        let out = self.map_values(x, |v| rule.value(v));
        self.push(out, &[x], Op::Map(x, rule))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, &[a, b], Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.map_values(x, |v| v * factor);
        self.push(out, &[x], Op::Scale(x, factor))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), &[x], Op::Sum(x))
    }

    /// Arithmetic mean of one-element tensors.
    pub fn mean(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() {
            return Err(Error::InvalidArgument("mean of an empty list".into()));
        }
        if let Some(v) = scalars.iter().find(|v| self.value(**v).len() != 1) {
            return Err(Error::shape(
                "mean",
                format!("expected scalars, got {:?}", self.value(*v).shape()),
            ));
        }
        let joined = self.concat(scalars, 0)?;
        let total = self.sum(joined);
        Ok(self.scale(total, 1.0 / scalars.len() as f64))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self
            .value(x)
            .reshaped(shape)
            .map_err(|e| Error::shape("reshape", e.to_string()))?;
        Ok(self.push(out, &[x], Op::Reshape(x)))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, &[n])
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("cannot multiply {:?} by {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_acc(m, k, n, ta.data(), tb.data(), &mut out);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, &[a, b], Op::MatMul(a, b)))
    }

    /// Cross-correlation of `input[C_in×H×W]` with `kernel[C_out×C_in×kh×kw]`
    /// plus a per-output-channel `bias[C_out]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (ti, tk, tb) = (self.value(input), self.value(kernel), self.value(bias));
        if ti.ndim() != 3 || tk.ndim() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "expected input C×H×W and kernel O×C×kh×kw, got {:?} and {:?}",
                    ti.shape(),
                    tk.shape()
                ),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (channels, height, width) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
        let (out_c, kc, kernel_h, kernel_w) =
            (tk.shape()[0], tk.shape()[1], tk.shape()[2], tk.shape()[3]);
        if kc != channels {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {:?} expects {kc} input channels, input {:?}", tk.shape(), ti.shape()),
            ));
        }
        if tb.shape() != [out_c] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} does not match {out_c} output channels", tb.shape()),
            ));
        }
        if height + 2 * pad < kernel_h || width + 2 * pad < kernel_w {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {kernel_h}×{kernel_w} exceeds padded input {}×{}",
                    height + 2 * pad,
                    width + 2 * pad
                ),
            ));
        }
        let geometry = ConvGeometry {
            channels,
            height,
            width,
            kernel_h,
            kernel_w,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel_h) / stride + 1,
            out_w: (width + 2 * pad - kernel_w) / stride + 1,
        };
        let cols = kernels::im2col(&geometry, ti.data());
        let positions = geometry.positions();
        let mut out = vec![0.0; out_c * positions];
        for (o, &b) in tb.data().iter().enumerate() {
            out[o * positions..(o + 1) * positions].fill(b);
        }
        kernels::gemm_acc(out_c, geometry.patch_len(), positions, tk.data(), &cols, &mut out);
        let out = Tensor::new(vec![out_c, geometry.out_h, geometry.out_w], out)?;
        let keep_cols = self.requires_grad(kernel);
        Ok(self.push(
            out,
            &[input, kernel, bias],
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
                cols: if keep_cols { cols } else { Vec::new() },
            },
        ))
    }

    /// Max pooling over `window×window` regions of a `C×H×W` tensor.
    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let t = self.value(x);
        if t.ndim() != 3 {
            return Err(Error::shape("maxpool2d", format!("expected C×H×W, got {:?}", t.shape())));
        }
        if window == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "maxpool2d window and stride must be positive".into(),
            ));
        }
        let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        if h < window || w < window {
            return Err(Error::shape(
                "maxpool2d",
                format!("window {window} exceeds input {h}×{w}"),
            ));
        }
        let (values, argmax, oh, ow) = kernels::maxpool_forward(t.data(), c, h, w, window, stride);
        let out = Tensor::new(vec![c, oh, ow], values)?;
        Ok(self.push(out, &[x], Op::MaxPool { input: x, argmax }))
    }

    /// Local response normalisation across the channel axis of a `C×H×W` tensor.
    pub fn lrn(&mut self, x: Var, params: LrnParams) -> Result<Var> {
        if !(params.k > 0.0) {
            return Err(Error::Domain {
                op: "lrn",
                detail: format!("k must be positive, got {}", params.k),
            });
        }
        if params.alpha < 0.0 {
            return Err(Error::Domain {
                op: "lrn",
                detail: format!("alpha must be non-negative, got {}", params.alpha),
            });
        }
        let t = self.value(x);
        if t.ndim() != 3 {
            return Err(Error::shape("lrn", format!("expected C×H×W, got {:?}", t.shape())));
        }
        let channels = t.shape()[0];
        let plane = t.shape()[1] * t.shape()[2];
        let (out, denom) = kernels::lrn_forward(
            t.data(),
            channels,
            plane,
            params.depth_radius,
            params.k,
            params.alpha,
            params.beta,
        );
        let out = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(out, &[x], Op::Lrn { input: x, params, denom }))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of an empty list".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut axis_total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("part {s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            parts,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Softmax over all elements of a vector.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let t = self.value(logits);
        if t.ndim() != 1 {
            return Err(Error::shape("softmax", format!("expected a vector, got {:?}", t.shape())));
        }
        let out = Tensor::vector(kernels::softmax(t.data()))?;
        Ok(self.push(out, &[logits], Op::Softmax(logits)))
    }

    /// `-log softmax(logits)[label]`, computed with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.ndim() != 1 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("expected a vector of logits, got {:?}", t.shape()),
            ));
        }
        if label >= t.len() {
            return Err(Error::Index {
                op: "softmax_cross_entropy",
                index: label,
                size: t.len(),
            });
        }
        let (max, shifted_lse) = kernels::log_sum_exp_shifted(t.data());
        let loss = (max - t.data()[label]) + shifted_lse;
        let probs = kernels::softmax(t.data());
        Ok(self.push(
            Tensor::scalar(loss),
            &[logits],
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }

    /// Max, mean and min of each row of a `rows×len` tensor (a vector is one
    /// row), laid out as `[max₀, mean₀, min₀, max₁, …]`.
    pub fn triple_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, len) = match *t.shape() {
            [len] => (1, len),
            [rows, len] => (rows, len),
            _ => {
                return Err(Error::shape(
                    "triple_pool",
                    format!("expected a vector or matrix, got {:?}", t.shape()),
                ))
            }
        };
        let mut out = Vec::with_capacity(3 * rows);
        let mut argmax = Vec::with_capacity(rows);
        let mut argmin = Vec::with_capacity(rows);
        for row in t.data().chunks(len) {
            let (mut hi, mut lo) = (0, 0);
            for (i, &v) in row.iter().enumerate() {
                if v > row[hi] {
                    hi = i;
                }
                if v < row[lo] {
                    lo = i;
                }
            }
            let mean = kernels::bounded_mean(row, row[lo], row[hi]);
            out.extend_from_slice(&[row[hi], mean, row[lo]]);
            argmax.push(hi);
            argmin.push(lo);
        }
        let out = Tensor::vector(out)?;
        Ok(self.push(
            out,
            &[x],
            Op::TriplePool {
                input: x,
                rows,
                len,
                argmax,
                argmin,
            },
        ))
    }

    /// Back-propagates from a one-element `loss`, adding `∂loss/∂leaf` into the
    /// gradient slot of every reachable leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {shape:?}"),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                // Put it back; leaves are flushed into their slots below.
                grads[idx] = Some(upstream);
                continue;
            }
            self.propagate(idx, &upstream, &mut grads);
        }

        for (idx, g) in grads.into_iter().enumerate() {
            if let (Some(g), Some(slot)) = (g, self.nodes[idx].grad.as_mut()) {
                for (s, v) in slot.data_mut().iter_mut().zip(g) {
                    *s += v;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, upstream: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                self.accumulate(grads, *x, |g| {
                    for ((gi, &u), &xv) in g.iter_mut().zip(upstream).zip(xs) {
                        if xv > 0.0 {
                            *gi += u;
                        }
                    }
                });
            }
            Op::Tanh(x) => self.accumulate(grads, *x, |g| {
                for ((gi, &u), &y) in g.iter_mut().zip(upstream).zip(out) {
                    *gi += u * (1.0 - y * y);
                }
            }),
            Op::Map(x, rule) => {
                let xs = self.value(*x).data();
                self.accumulate(grads, *x, |g| {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi += upstream[i] * rule.derivative(xs[i], out[i]);
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |g| add_into(g, upstream));
                }
            }
            Op::Scale(x, factor) => self.accumulate(grads, *x, |g| {
                for (gi, &u) in g.iter_mut().zip(upstream) {
                    *gi += u * factor;
                }
            }),
            Op::Sum(x) => self.accumulate(grads, *x, |g| {
                for gi in g.iter_mut() {
                    *gi += upstream[0];
                }
            }),
            Op::Reshape(x) => self.accumulate(grads, *x, |g| add_into(g, upstream)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                self.accumulate(grads, *a, |g| {
                    kernels::gemm_a_bt_acc(m, n, k, upstream, tb.data(), g)
                });
                self.accumulate(grads, *b, |g| {
                    kernels::gemm_at_b_acc(m, k, n, ta.data(), upstream, g)
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
                cols,
            } => {
                let tk = self.value(*kernel);
                let out_c = tk.shape()[0];
                let positions = geometry.positions();
                let patch = geometry.patch_len();
                self.accumulate(grads, *bias, |g| {
                    for (o, gi) in g.iter_mut().enumerate() {
                        *gi += upstream[o * positions..(o + 1) * positions].iter().sum::<f64>();
                    }
                });
                self.accumulate(grads, *kernel, |g| {
                    kernels::gemm_a_bt_acc(out_c, positions, patch, upstream, cols, g)
                });
                self.accumulate(grads, *input, |g| {
                    let mut dcols = vec![0.0; patch * positions];
                    kernels::gemm_at_b_acc(out_c, patch, positions, tk.data(), upstream, &mut dcols);
                    kernels::col2im_acc(geometry, &dcols, g);
                });
            }
            Op::MaxPool { input, argmax } => self.accumulate(grads, *input, |g| {
                for (&src, &u) in argmax.iter().zip(upstream) {
                    g[src] += u;
                }
            }),
            Op::Lrn {
                input,
                params,
                denom,
            } => {
                let t = self.value(*input);
                let channels = t.shape()[0];
                let plane = t.shape()[1] * t.shape()[2];
                self.accumulate(grads, *input, |g| {
                    kernels::lrn_backward_acc(
                        t.data(),
                        denom,
                        upstream,
                        channels,
                        plane,
                        params.depth_radius,
                        params.alpha,
                        params.beta,
                        g,
                    )
                });
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let row = out_shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let chunk = self.value(*p).shape()[*axis] * inner;
                    self.accumulate(grads, *p, |g| {
                        for o in 0..outer {
                            let src = &upstream[o * row + offset..o * row + offset + chunk];
                            add_into(&mut g[o * chunk..(o + 1) * chunk], src);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Softmax(x) => {
                let dot: f64 = upstream.iter().zip(out).map(|(u, y)| u * y).sum();
                self.accumulate(grads, *x, |g| {
                    for ((gi, &u), &y) in g.iter_mut().zip(upstream).zip(out) {
                        *gi += y * (u - dot);
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => self.accumulate(grads, *logits, |g| {
                for (j, gi) in g.iter_mut().enumerate() {
                    let target = if j == *label { 1.0 } else { 0.0 };
                    *gi += upstream[0] * (probs[j] - target);
                }
            }),
            Op::TriplePool {
                input,
                rows,
                len,
                argmax,
                argmin,
            } => self.accumulate(grads, *input, |g| {
                for r in 0..*rows {
                    let row = &mut g[r * len..(r + 1) * len];
                    row[argmax[r]] += upstream[3 * r];
                    let share = upstream[3 * r + 1] / *len as f64;
                    for gi in row.iter_mut() {
                        *gi += share;
                    }
                    row[argmin[r]] += upstream[3 * r + 2];
                }
            }),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

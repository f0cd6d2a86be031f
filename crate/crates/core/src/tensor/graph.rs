//! Append-only computation tape with reverse-mode differentiation.
//!
//! Every op validates shapes up front and checks its output for NaN/Inf;
//! a non-finite value anywhere is an error, never a silent state. Node
//! ids are strictly increasing, so a single reverse sweep visits each
//! node exactly once and respects data dependencies.

use super::kernels;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// The differentiable operation catalog.
pub enum Op<T: Scalar> {
    Input,
    /// inputs: x, w, (bias)
    Conv2d { stride: usize, pad: usize },
    /// inputs: x, w, (bias)
    ConvTranspose2d { stride: usize, pad: usize },
    /// inputs: x, w, (bias)
    Linear,
    /// inputs: x, gamma, beta
    InstanceNorm { eps: f64 },
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Abs,
    Neg,
    Add,
    Mul,
    /// Full reduction to a scalar.
    Mean,
    Sum,
    /// (N, ...) -> (N,)
    PerSampleSum,
    /// Two NCHW tensors joined on the channel axis.
    ConcatChannels,
    /// (N, K) -> (N, K, H, W)
    TileLabel { h: usize, w: usize },
    /// y_i = u_i * a_i + (1 - u_i) * b_i with one coefficient per sample.
    InterpolatePair { u: Vec<f64> },
    ScaleConst { c: f64 },
    AddConst { c: f64 },
    Reshape,
    /// Mean binary cross-entropy with logits against constant targets.
    BceWithLogits { targets: Tensor<T> },
    /// Mean softmax cross-entropy against constant one-hot targets.
    SoftmaxCrossEntropy { targets: Tensor<T> },
}

impl<T: Scalar> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Linear => "linear",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::Relu => "relu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Tanh => "tanh",
            Op::Abs => "abs",
            Op::Neg => "neg",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::PerSampleSum => "per_sample_sum",
            Op::ConcatChannels => "concat_channels",
            Op::TileLabel { .. } => "tile_label",
            Op::InterpolatePair { .. } => "interpolate_pair",
            Op::ScaleConst { .. } => "scale_const",
            Op::AddConst { .. } => "add_const",
            Op::Reshape => "reshape",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node<T: Scalar> {
    op: Op<T>,
    inputs: Vec<usize>,
    value: Tensor<T>,
    needs_grad: bool,
    saved_norm: Option<kernels::InstanceNormSaved<T>>,
}

/// Reverse-mode tape. Confined to one training thread; independent graphs
/// may run concurrently.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1-element node, as f64.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        Ok(self.nodes[v.0].value.item()?.to_f64())
    }

    /// Gradient of the last `backward` call w.r.t. node `v`, if any was
    /// produced (constants and unreachable nodes have none).
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Register an input tensor. It becomes a gradient leaf when
    /// `requires_grad` is set on the tensor.
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        t.assert_finite("graph input")?;
        let needs = t.requires_grad();
        self.push(Op::Input, vec![], t, needs, None)
    }

    /// Register a constant input regardless of the tensor's grad flag.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        t.assert_finite("graph constant")?;
        self.push(Op::Input, vec![], t, false, None)
    }

    fn push(
        &mut self,
        op: Op<T>,
        inputs: Vec<usize>,
        value: Tensor<T>,
        needs_grad: bool,
        saved_norm: Option<kernels::InstanceNormSaved<T>>,
    ) -> Result<Var> {
        let id = self.nodes.len();
        self.nodes.push(Node { op, inputs, value, needs_grad, saved_norm });
        self.grads.push(None);
        Ok(Var(id))
    }

    fn any_needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn record(&mut self, op: Op<T>, vars: &[Var], value: Tensor<T>) -> Result<Var> {
        value.assert_finite(op.name())?;
        let needs = self.any_needs(vars);
        self.push(op, vars.iter().map(|v| v.0).collect(), value, needs, None)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let y = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut vars = vec![x, w];
        if let Some(b) = b {
            vars.push(b);
        }
        self.record(Op::Conv2d { stride, pad }, &vars, y)
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let y = kernels::conv_transpose2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut vars = vec![x, w];
        if let Some(b) = b {
            vars.push(b);
        }
        self.record(Op::ConvTranspose2d { stride, pad }, &vars, y)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = kernels::linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut vars = vec![x, w];
        if let Some(b) = b {
            vars.push(b);
        }
        self.record(Op::Linear, &vars, y)
    }

    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, saved) =
            kernels::instance_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        y.assert_finite("instance_norm")?;
        let needs = self.any_needs(&[x, gamma, beta]);
        self.push(
            Op::InstanceNorm { eps },
            vec![x.0, gamma.0, beta.0],
            y,
            needs,
            Some(saved),
        )
    }

    fn unary(&mut self, op: Op<T>, x: Var, f: impl Fn(T) -> T) -> Result<Var> {
        let src = self.value(x);
        let mut out = Tensor::zeros(src.shape());
        for (o, &v) in out.data_mut().iter_mut().zip(src.data()) {
            *o = f(v);
        }
        self.record(op, &[x], out)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Op::Relu, x, |v| if v > T::ZERO { v } else { T::ZERO })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::from_f64(slope);
        self.unary(Op::LeakyRelu { slope }, x, |v| if v > T::ZERO { v } else { s * v })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Op::Tanh, x, |v| T::from_f64(v.to_f64().tanh()))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(Op::Abs, x, |v| if v < T::ZERO { -v } else { v })
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Op::Neg, x, |v| -v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let cv = T::from_f64(c);
        self.unary(Op::ScaleConst { c }, x, |v| cv * v)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        let cv = T::from_f64(c);
        self.unary(Op::AddConst { c }, x, |v| cv + v)
    }

    fn binary_same_shape(&mut self, op: Op<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.value(a).same_shape(self.value(b), op.name())?;
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(ta.shape());
        for ((o, &x), &y) in out.data_mut().iter_mut().zip(ta.data()).zip(tb.data()) {
            *o = f(x, y);
        }
        self.record(op, &[a, b], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(Op::Add, a, b, |x, y| x + y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(Op::Mul, a, b, |x, y| x * y)
    }

    /// a - b, as add(a, neg(b)).
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let mut acc = 0.0f64;
        for v in t.data() {
            acc += v.to_f64();
        }
        let out = Tensor::scalar(T::from_f64(acc / t.numel() as f64));
        self.record(Op::Mean, &[x], out)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let mut acc = 0.0f64;
        for v in t.data() {
            acc += v.to_f64();
        }
        let out = Tensor::scalar(T::from_f64(acc));
        self.record(Op::Sum, &[x], out)
    }

    pub fn per_sample_sum(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().is_empty() {
            return Err(Error::invalid("per_sample_sum needs a leading sample axis"));
        }
        let n = t.shape()[0];
        let per = t.numel() / n;
        let mut out = Tensor::zeros(&[n]);
        for i in 0..n {
            let mut acc = 0.0f64;
            for v in &t.data()[i * per..(i + 1) * per] {
                acc += v.to_f64();
            }
            out.data_mut()[i] = T::from_f64(acc);
        }
        self.record(Op::PerSampleSum, &[x], out)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 4
            || sb.len() != 4
            || sa[0] != sb[0]
            || sa[2] != sb[2]
            || sa[3] != sb[3]
        {
            return Err(Error::shape("concat_channels", sa, sb));
        }
        let (n, c1, c2, h, w) = (sa[0], sa[1], sb[1], sa[2], sa[3]);
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, c1 + c2, h, w]);
        for i in 0..n {
            let dst = &mut out.data_mut()[i * (c1 + c2) * plane..(i + 1) * (c1 + c2) * plane];
            dst[..c1 * plane].copy_from_slice(&ta.data()[i * c1 * plane..(i + 1) * c1 * plane]);
            dst[c1 * plane..].copy_from_slice(&tb.data()[i * c2 * plane..(i + 1) * c2 * plane]);
        }
        self.record(Op::ConcatChannels, &[a, b], out)
    }

    /// Tile a (N,K) label matrix into a (N,K,H,W) spatial map.
    pub fn tile_label(&mut self, labels: Var, h: usize, w: usize) -> Result<Var> {
        let t = self.value(labels);
        if t.shape().len() != 2 {
            return Err(Error::shape("tile_label expects (N,K)", t.shape(), &[]));
        }
        let (n, k) = (t.shape()[0], t.shape()[1]);
        let mut out = Tensor::zeros(&[n, k, h, w]);
        for i in 0..n {
            for c in 0..k {
                let v = t.data()[i * k + c];
                out.data_mut()[(i * k + c) * h * w..(i * k + c + 1) * h * w].fill(v);
            }
        }
        self.record(Op::TileLabel { h, w }, &[labels], out)
    }

    /// Per-sample convex combination u*a + (1-u)*b. `u` entries must lie
    /// in [0,1]; they are attributes, not differentiable inputs.
    pub fn interpolate_pair(&mut self, a: Var, b: Var, u: &[f64]) -> Result<Var> {
        self.value(a).same_shape(self.value(b), "interpolate_pair")?;
        let n = self.value(a).shape()[0];
        if u.len() != n {
            return Err(Error::invalid(format!(
                "interpolate_pair needs one coefficient per sample: got {} for {} samples",
                u.len(),
                n
            )));
        }
        if u.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("interpolate_pair coefficients must lie in [0,1]"));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let per = ta.numel() / n;
        let mut out = Tensor::zeros(ta.shape());
        for i in 0..n {
            let (ui, vi) = (T::from_f64(u[i]), T::from_f64(1.0 - u[i]));
            let dst = &mut out.data_mut()[i * per..(i + 1) * per];
            let sa = &ta.data()[i * per..(i + 1) * per];
            let sb = &tb.data()[i * per..(i + 1) * per];
            for j in 0..per {
                dst[j] = ui * sa[j] + vi * sb[j];
            }
        }
        self.record(Op::InterpolatePair { u: u.to_vec() }, &[a, b], out)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(Error::shape("reshape element count", t.shape(), shape));
        }
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        self.record(Op::Reshape, &[x], out)
    }

    /// Numerically-stable mean BCE-with-logits. Targets must be 0/1 and
    /// are constants.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let lt = self.value(logits);
        lt.same_shape(targets, "bce_with_logits")?;
        if targets
            .data()
            .iter()
            .any(|&v| v != T::ZERO && v != T::ONE)
        {
            return Err(Error::invalid("bce_with_logits targets must be exactly 0 or 1"));
        }
        let mut acc = 0.0f64;
        for (&l, &t) in lt.data().iter().zip(targets.data()) {
            let (l, t) = (l.to_f64(), t.to_f64());
            // max(l,0) - l*t + ln(1 + exp(-|l|))
            acc += l.max(0.0) - l * t + (-l.abs()).exp().ln_1p();
        }
        let out = Tensor::scalar(T::from_f64(acc / lt.numel() as f64));
        self.record(Op::BceWithLogits { targets: targets.clone() }, &[logits], out)
    }

    /// Mean softmax cross-entropy over rows of (N,K) logits against
    /// constant one-hot targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let lt = self.value(logits);
        lt.same_shape(targets, "softmax_cross_entropy")?;
        if lt.shape().len() != 2 {
            return Err(Error::shape("softmax_cross_entropy expects (N,K)", lt.shape(), &[]));
        }
        let (n, k) = (lt.shape()[0], lt.shape()[1]);
        for row in 0..n {
            let r = &targets.data()[row * k..(row + 1) * k];
            let ones = r.iter().filter(|&&v| v == T::ONE).count();
            let zeros = r.iter().filter(|&&v| v == T::ZERO).count();
            if ones != 1 || zeros != k - 1 {
                return Err(Error::invalid("softmax_cross_entropy targets must be one-hot rows"));
            }
        }
        let mut acc = 0.0f64;
        for row in 0..n {
            let r = &lt.data()[row * k..(row + 1) * k];
            let mx = r.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
            let lse = mx + r.iter().map(|v| (v.to_f64() - mx).exp()).sum::<f64>().ln();
            let mut picked = 0.0f64;
            for col in 0..k {
                if targets.data()[row * k + col] == T::ONE {
                    picked = r[col].to_f64();
                }
            }
            acc += lse - picked;
        }
        let out = Tensor::scalar(T::from_f64(acc / n as f64));
        self.record(Op::SoftmaxCrossEntropy { targets: targets.clone() }, &[logits], out)
    }

    fn accumulate(&mut self, id: usize, delta: Tensor<T>) {
        match &mut self.grads[id] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse sweep from a scalar loss. Gradients of previous sweeps on
    /// this graph are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward on an empty graph"));
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(T::ONE));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad || self.grads[id].is_none() {
                continue;
            }
            self.backprop_node(id)?;
        }
        Ok(())
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    fn backprop_node(&mut self, id: usize) -> Result<()> {
        if matches!(self.nodes[id].op, Op::Input) {
            // leaves keep their gradient; it is the result
            return Ok(());
        }
        let gy = self.grads[id].take().expect("grad present");
        let inputs = self.nodes[id].inputs.clone();
        match &self.nodes[id].op {
            Op::Input => {}
            Op::Conv2d { stride, pad } => {
                let (stride, pad) = (*stride, *pad);
                let (need_x, need_w) = (self.needs(inputs[0]), self.needs(inputs[1]));
                let need_b = inputs.len() > 2 && self.needs(inputs[2]);
                let (gx, gw, gb) = kernels::conv2d_backward(
                    &self.nodes[inputs[0]].value,
                    &self.nodes[inputs[1]].value,
                    stride,
                    pad,
                    &gy,
                    need_x,
                    need_w,
                    need_b,
                )?;
                if let Some(gx) = gx {
                    self.accumulate(inputs[0], gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(inputs[1], gw);
                }
                if let Some(gb) = gb {
                    self.accumulate(inputs[2], gb);
                }
            }
            Op::ConvTranspose2d { stride, pad } => {
                let (stride, pad) = (*stride, *pad);
                let (need_x, need_w) = (self.needs(inputs[0]), self.needs(inputs[1]));
                let need_b = inputs.len() > 2 && self.needs(inputs[2]);
                let (gx, gw, gb) = kernels::conv_transpose2d_backward(
                    &self.nodes[inputs[0]].value,
                    &self.nodes[inputs[1]].value,
                    stride,
                    pad,
                    &gy,
                    need_x,
                    need_w,
                    need_b,
                )?;
                if let Some(gx) = gx {
                    self.accumulate(inputs[0], gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(inputs[1], gw);
                }
                if let Some(gb) = gb {
                    self.accumulate(inputs[2], gb);
                }
            }
            Op::Linear => {
                let (need_x, need_w) = (self.needs(inputs[0]), self.needs(inputs[1]));
                let need_b = inputs.len() > 2 && self.needs(inputs[2]);
                let (gx, gw, gb) = kernels::linear_backward(
                    &self.nodes[inputs[0]].value,
                    &self.nodes[inputs[1]].value,
                    &gy,
                    need_x,
                    need_w,
                    need_b,
                )?;
                if let Some(gx) = gx {
                    self.accumulate(inputs[0], gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(inputs[1], gw);
                }
                if let Some(gb) = gb {
                    self.accumulate(inputs[2], gb);
                }
            }
            Op::InstanceNorm { .. } => {
                let saved = self.nodes[id].saved_norm.as_ref().expect("norm stats saved");
                let (gx, ggamma, gbeta) = kernels::instance_norm_backward(
                    &self.nodes[inputs[0]].value,
                    &self.nodes[inputs[1]].value,
                    saved,
                    &gy,
                )?;
                if self.needs(inputs[0]) {
                    self.accumulate(inputs[0], gx);
                }
                if self.needs(inputs[1]) {
                    self.accumulate(inputs[1], ggamma);
                }
                if self.needs(inputs[2]) {
                    self.accumulate(inputs[2], gbeta);
                }
            }
            Op::Relu => {
                let x = &self.nodes[inputs[0]].value;
                let mut gx = Tensor::zeros(x.shape());
                for ((g, &xv), &gyv) in gx.data_mut().iter_mut().zip(x.data()).zip(gy.data()) {
                    *g = if xv > T::ZERO { gyv } else { T::ZERO };
                }
                self.accumulate(inputs[0], gx);
            }
            Op::LeakyRelu { slope } => {
                let s = T::from_f64(*slope);
                let x = &self.nodes[inputs[0]].value;
                let mut gx = Tensor::zeros(x.shape());
                for ((g, &xv), &gyv) in gx.data_mut().iter_mut().zip(x.data()).zip(gy.data()) {
                    *g = if xv > T::ZERO { gyv } else { s * gyv };
                }
                self.accumulate(inputs[0], gx);
            }
            Op::Tanh => {
                let y = &self.nodes[id].value;
                let mut gx = Tensor::zeros(y.shape());
                for ((g, &yv), &gyv) in gx.data_mut().iter_mut().zip(y.data()).zip(gy.data()) {
                    *g = (T::ONE - yv * yv) * gyv;
                }
                self.accumulate(inputs[0], gx);
            }
            Op::Abs => {
                let x = &self.nodes[inputs[0]].value;
                let mut gx = Tensor::zeros(x.shape());
                for ((g, &xv), &gyv) in gx.data_mut().iter_mut().zip(x.data()).zip(gy.data()) {
                    *g = if xv > T::ZERO {
                        gyv
                    } else if xv < T::ZERO {
                        -gyv
                    } else {
                        T::ZERO
                    };
                }
                self.accumulate(inputs[0], gx);
            }
            Op::Neg => {
                let mut gx = gy.clone();
                for v in gx.data_mut() {
                    *v = -*v;
                }
                self.accumulate(inputs[0], gx);
            }
            Op::Add => {
                if self.needs(inputs[0]) {
                    self.accumulate(inputs[0], gy.clone());
                }
                if self.needs(inputs[1]) {
                    self.accumulate(inputs[1], gy.clone());
                }
            }
            Op::Mul => {
                if self.needs(inputs[0]) {
                    let other = &self.nodes[inputs[1]].value;
                    let mut gx = Tensor::zeros(other.shape());
                    for ((g, &ov), &gyv) in gx.data_mut().iter_mut().zip(other.data()).zip(gy.data()) {
                        *g = ov * gyv;
                    }
                    self.accumulate(inputs[0], gx);
                }
                if self.needs(inputs[1]) {
                    let other = &self.nodes[inputs[0]].value;
                    let mut gx = Tensor::zeros(other.shape());
                    for ((g, &ov), &gyv) in gx.data_mut().iter_mut().zip(other.data()).zip(gy.data()) {
                        *g = ov * gyv;
                    }
                    self.accumulate(inputs[1], gx);
                }
            }
            Op::Mean => {
                let x = &self.nodes[inputs[0]].value;
                let scale = gy.data()[0].to_f64() / x.numel() as f64;
                self.accumulate(inputs[0], Tensor::full(x.shape(), T::from_f64(scale)));
            }
            Op::Sum => {
                let x = &self.nodes[inputs[0]].value;
                self.accumulate(inputs[0], Tensor::full(x.shape(), gy.data()[0]));
            }
            Op::PerSampleSum => {
                let x = &self.nodes[inputs[0]].value;
                let n = x.shape()[0];
                let per = x.numel() / n;
                let mut gx = Tensor::zeros(x.shape());
                for i in 0..n {
                    gx.data_mut()[i * per..(i + 1) * per].fill(gy.data()[i]);
                }
                self.accumulate(inputs[0], gx);
            }
            Op::ConcatChannels => {
                let sa = self.nodes[inputs[0]].value.shape().to_vec();
                let sb = self.nodes[inputs[1]].value.shape().to_vec();
                let (n, c1, c2) = (sa[0], sa[1], sb[1]);
                let plane = sa[2] * sa[3];
                if self.needs(inputs[0]) {
                    let mut ga = Tensor::zeros(&sa);
                    for i in 0..n {
                        let src = &gy.data()[i * (c1 + c2) * plane..i * (c1 + c2) * plane + c1 * plane];
                        ga.data_mut()[i * c1 * plane..(i + 1) * c1 * plane].copy_from_slice(src);
                    }
                    self.accumulate(inputs[0], ga);
                }
                if self.needs(inputs[1]) {
                    let mut gb = Tensor::zeros(&sb);
                    for i in 0..n {
                        let start = i * (c1 + c2) * plane + c1 * plane;
                        let src = &gy.data()[start..start + c2 * plane];
                        gb.data_mut()[i * c2 * plane..(i + 1) * c2 * plane].copy_from_slice(src);
                    }
                    self.accumulate(inputs[1], gb);
                }
            }
            Op::TileLabel { h, w } => {
                let (h, w) = (*h, *w);
                let x = &self.nodes[inputs[0]].value;
                let (n, k) = (x.shape()[0], x.shape()[1]);
                let mut gx = Tensor::zeros(&[n, k]);
                for i in 0..n {
                    for c in 0..k {
                        let mut acc = 0.0f64;
                        for v in &gy.data()[(i * k + c) * h * w..(i * k + c + 1) * h * w] {
                            acc += v.to_f64();
                        }
                        gx.data_mut()[i * k + c] = T::from_f64(acc);
                    }
                }
                self.accumulate(inputs[0], gx);
            }
            Op::InterpolatePair { u } => {
                let u = u.clone();
                let shape = self.nodes[inputs[0]].value.shape().to_vec();
                let n = shape[0];
                let per: usize = shape[1..].iter().product();
                if self.needs(inputs[0]) {
                    let mut ga = Tensor::zeros(&shape);
                    for i in 0..n {
                        let ui = T::from_f64(u[i]);
                        for (g, &gyv) in ga.data_mut()[i * per..(i + 1) * per]
                            .iter_mut()
                            .zip(&gy.data()[i * per..(i + 1) * per])
                        {
                            *g = ui * gyv;
                        }
                    }
                    self.accumulate(inputs[0], ga);
                }
                if self.needs(inputs[1]) {
                    let mut gb = Tensor::zeros(&shape);
                    for i in 0..n {
                        let vi = T::from_f64(1.0 - u[i]);
                        for (g, &gyv) in gb.data_mut()[i * per..(i + 1) * per]
                            .iter_mut()
                            .zip(&gy.data()[i * per..(i + 1) * per])
                        {
                            *g = vi * gyv;
                        }
                    }
                    self.accumulate(inputs[1], gb);
                }
            }
            Op::ScaleConst { c } => {
                let cv = T::from_f64(*c);
                let mut gx = gy.clone();
                for v in gx.data_mut() {
                    *v = cv * *v;
                }
                self.accumulate(inputs[0], gx);
            }
            Op::AddConst { .. } => {
                self.accumulate(inputs[0], gy.clone());
            }
            Op::Reshape => {
                let shape = self.nodes[inputs[0]].value.shape().to_vec();
                let gx = Tensor::new(shape, gy.data().to_vec())?;
                self.accumulate(inputs[0], gx);
            }
            Op::BceWithLogits { targets } => {
                let scale = gy.data()[0].to_f64() / targets.numel() as f64;
                let x = &self.nodes[inputs[0]].value;
                let mut gx = Tensor::zeros(x.shape());
                for ((g, &l), &t) in gx.data_mut().iter_mut().zip(x.data()).zip(targets.data()) {
                    let l = l.to_f64();
                    let sig = if l >= 0.0 {
                        1.0 / (1.0 + (-l).exp())
                    } else {
                        let e = l.exp();
                        e / (1.0 + e)
                    };
                    *g = T::from_f64((sig - t.to_f64()) * scale);
                }
                self.accumulate(inputs[0], gx);
            }
            Op::SoftmaxCrossEntropy { targets } => {
                let x = &self.nodes[inputs[0]].value;
                let (n, k) = (x.shape()[0], x.shape()[1]);
                let scale = gy.data()[0].to_f64() / n as f64;
                let mut gx = Tensor::zeros(x.shape());
                for row in 0..n {
                    let r = &x.data()[row * k..(row + 1) * k];
                    let mx = r.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
                    let denom: f64 = r.iter().map(|v| (v.to_f64() - mx).exp()).sum();
                    for col in 0..k {
                        let p = (r[col].to_f64() - mx).exp() / denom;
                        let t = targets.data()[row * k + col].to_f64();
                        gx.data_mut()[row * k + col] = T::from_f64((p - t) * scale);
                    }
                }
                self.accumulate(inputs[0], gx);
            }
        }
        Ok(())
    }
}

//! Reverse-mode automatic differentiation over whole tensors.
//!
//! A [`Tape`] records every operation in execution order, so its node list
//! is already topologically sorted. [`Tape::backward`] walks it once in
//! reverse and returns the gradient of a scalar loss with respect to every
//! node that depends on a leaf created with `requires_grad`.

use super::kernels::{self, ConvDims};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    Conv {
        input: Var,
        kernel: Var,
        bias: Var,
        dims: ConvDims,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        channels: usize,
        per_image: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        rows: usize,
        d_in: usize,
        d_out: usize,
    },
    GlobalAvgPool {
        input: Var,
        hw: usize,
    },
    GatherRows {
        input: Var,
        rows: Vec<usize>,
        width: usize,
    },
    Sum(Var),
    Mse { pred: Var, target: Vec<f64> },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-channel statistics tracked by batch normalization for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub initialized: bool,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            initialized: false,
        }
    }
}

pub enum BnMode<'a> {
    /// Normalize with batch statistics and fold them into the running stats.
    Train(&'a mut RunningStats),
    /// Normalize with the stored running statistics.
    Eval(&'a RunningStats),
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one optional buffer per tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of every parameter leaf on `tape` into `store`.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (i, node) in tape.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = &self.grads[i] {
                    store.accumulate_grad(id, g);
                }
            }
        }
    }
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: operands {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Splits an image-like shape into `(batch, channels, h, w)`.
fn image_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(Error::shape(format!(
            "{what}: expected [C,H,W] or [B,C,H,W], got {shape:?}"
        ))),
    }
}

fn with_channels(shape: &[usize], c: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let n = s.len();
    s[n - 3] = c;
    s
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf { param: None }, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Places a copy of a stored parameter on the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let trainable = p.trainable;
        self.push(p.value.clone(), Op::Leaf { param: Some(id) }, trainable)
    }

    /// Same-padded stride-1 cross-correlation. `kernel` is `[C_out, C_in, k, k]`
    /// with odd `k`, or `[C_out, C_in]` for a 1x1 convolution.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        let (batch, c_in, h, w) = image_dims(&xs, "conv2d")?;
        let (c_out, kc, k) = match *ks.as_slice() {
            [co, ci, kh, kw] if kh == kw && kh % 2 == 1 => (co, ci, kh),
            [co, ci] => (co, ci, 1),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d: kernel must be [C_out,C_in,k,k] with odd k, got {ks:?}"
                )))
            }
        };
        if kc != c_in {
            return Err(Error::shape(format!(
                "conv2d: kernel {ks:?} expects {kc} input channels but input is {xs:?}"
            )));
        }
        if self.value(bias).shape() != [c_out] {
            return Err(Error::shape(format!(
                "conv2d: bias {:?} does not match {c_out} output channels",
                self.value(bias).shape()
            )));
        }
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            h,
            w,
            k,
        };
        let out = kernels::conv_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            dims,
        );
        let value = Tensor::new(with_channels(&xs, c_out), out)?;
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            value,
            Op::Conv {
                input,
                kernel,
                bias,
                dims,
            },
            rg,
        ))
    }

    /// Per-pixel affine map across channels; `weight` is `[C_out, C_in]`.
    pub fn conv1x1(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let ws = self.value(weight).shape();
        if ws.len() != 2 {
            return Err(Error::shape(format!("conv1x1: weight must be 2-D, got {ws:?}")));
        }
        self.conv2d(input, weight, bias)
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_>,
    ) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let (batch, c, h, w) = image_dims(&xs, "batch_norm")?;
        for (v, name) in [(gamma, "gamma"), (beta, "beta")] {
            if self.value(v).shape() != [c] {
                return Err(Error::shape(format!(
                    "batch_norm: {name} {:?} does not match {c} channels",
                    self.value(v).shape()
                )));
            }
        }
        let hw = h * w;
        let n = (batch * hw) as f64;
        let x = self.value(input).data();
        let (mean, var, train) = match &mode {
            BnMode::Train(_) => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..batch {
                    for ch in 0..c {
                        let s = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                        mean[ch] += s.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for b in 0..batch {
                    for ch in 0..c {
                        let s = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                        var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                (mean, var, true)
            }
            BnMode::Eval(stats) => {
                if !stats.initialized {
                    return Err(Error::invalid(
                        "batch_norm: eval mode requested before any training-mode pass",
                    ));
                }
                if stats.mean.len() != c {
                    return Err(Error::shape(format!(
                        "batch_norm: running stats hold {} channels, input has {c}",
                        stats.mean.len()
                    )));
                }
                (stats.mean.clone(), stats.var.clone(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        if let BnMode::Train(stats) = mode {
            if stats.mean.len() != c {
                return Err(Error::shape(format!(
                    "batch_norm: running stats hold {} channels, input has {c}",
                    stats.mean.len()
                )));
            }
            for ch in 0..c {
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean[ch];
                stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * var[ch];
            }
            stats.initialized = true;
        }
        let value = Tensor::new(xs, out)?;
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                channels: c,
                per_image: hw,
                xhat,
                inv_std,
                train,
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| if a > 0.0 { a } else { 0.0 }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |a| a * factor, Op::Scale(x, factor))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Result<Var> {
        check_same(self.value(a), self.value(b), what)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    /// `x W^T + b` for `x` of shape `[d_in]` or `[rows, d_in]` and `W` of shape `[d_out, d_in]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let (rows, d_in) = match *xs.as_slice() {
            [d] => (1, d),
            [r, d] => (r, d),
            _ => return Err(Error::shape(format!("linear: input must be 1-D or 2-D, got {xs:?}"))),
        };
        let d_out = match *ws.as_slice() {
            [o, i] if i == d_in => o,
            _ => {
                return Err(Error::shape(format!(
                    "linear: weight {ws:?} incompatible with input {xs:?}"
                )))
            }
        };
        if let Some(b) = bias {
            if self.value(b).shape() != [d_out] {
                return Err(Error::shape(format!(
                    "linear: bias {:?} does not match {d_out} outputs",
                    self.value(b).shape()
                )));
            }
        }
        let x = self.value(input).data();
        let wv = self.value(weight).data();
        let mut out = vec![0.0; rows * d_out];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for r in 0..rows {
                out[r * d_out..(r + 1) * d_out].copy_from_slice(bv);
            }
        }
        kernels::gemm_bt_acc(x, wv, &mut out, rows, d_in, d_out);
        let shape = if xs.len() == 1 { vec![d_out] } else { vec![rows, d_out] };
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
                rows,
                d_in,
                d_out,
            },
            rg,
        ))
    }

    /// Per-channel mean over all pixels: `[C,H,W] -> [C]`, `[B,C,H,W] -> [B,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let (batch, c, h, w) = image_dims(&xs, "global_avg_pool")?;
        let hw = h * w;
        let x = self.value(input).data();
        let out: Vec<f64> = x
            .chunks(hw)
            .map(|s| s.iter().sum::<f64>() / hw as f64)
            .collect();
        let shape = if xs.len() == 3 { vec![c] } else { vec![batch, c] };
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(input);
        Ok(self.push(
            value,
            Op::GlobalAvgPool { input, hw },
            rg,
        ))
    }

    /// Selects rows of a 2-D tensor in the given order (rows may repeat).
    pub fn gather_rows(&mut self, input: Var, rows: &[usize]) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let [n, width] = *xs.as_slice() else {
            return Err(Error::shape(format!("gather_rows: input must be 2-D, got {xs:?}")));
        };
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape(format!("gather_rows: row {bad} out of range for {xs:?}")));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&x[r * width..(r + 1) * width]);
        }
        let value = Tensor::new(vec![rows.len(), width], out)?;
        let rg = self.rg(input);
        Ok(self.push(
            value,
            Op::GatherRows {
                input,
                rows: rows.to_vec(),
                width,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Mean of squared differences against a constant target of equal shape.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        check_same(self.value(pred), target, "mse")?;
        let p = self.value(pred).data();
        let n = p.len() as f64;
        let loss = p
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut send = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv {
                input,
                kernel,
                bias,
                dims,
            } => {
                let need = [self.rg(*input), self.rg(*kernel), self.rg(*bias)];
                let (dx, dk, db) = kernels::conv_backward(
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    g,
                    *dims,
                    need,
                );
                if let Some(dx) = dx {
                    send(*input, dx);
                }
                if let Some(dk) = dk {
                    send(*kernel, dk);
                }
                if let Some(db) = db {
                    send(*bias, db);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                channels,
                per_image,
                xhat,
                inv_std,
                train,
            } => {
                let c = *channels;
                let hw = *per_image;
                let batch = g.len() / (c * hw);
                let n = (batch * hw) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for b in 0..batch {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        for i in off..off + hw {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                if self.rg(*input) {
                    let gam = self.value(*gamma).data();
                    let mut dx = vec![0.0; g.len()];
                    for b in 0..batch {
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            let k = gam[ch] * inv_std[ch];
                            if *train {
                                let mg = sum_g[ch] / n;
                                let mgx = sum_gx[ch] / n;
                                for i in off..off + hw {
                                    dx[i] = k * (g[i] - mg - xhat[i] * mgx);
                                }
                            } else {
                                for i in off..off + hw {
                                    dx[i] = k * g[i];
                                }
                            }
                        }
                    }
                    send(*input, dx);
                }
                send(*gamma, sum_gx);
                send(*beta, sum_g);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &a)| if a > 0.0 { gi } else { 0.0 })
                    .collect();
                send(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gi, &y)| gi * y * (1.0 - y))
                    .collect();
                send(*x, d);
            }
            Op::Tanh(x) => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gi, &y)| gi * (1.0 - y * y))
                    .collect();
                send(*x, d);
            }
            Op::Scale(x, f) => send(*x, g.iter().map(|gi| gi * f).collect()),
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                send(*a, g.iter().zip(bv).map(|(gi, y)| gi * y).collect());
                send(*b, g.iter().zip(av).map(|(gi, x)| gi * x).collect());
            }
            Op::Linear {
                input,
                weight,
                bias,
                rows,
                d_in,
                d_out,
            } => {
                if self.rg(*input) {
                    let mut dx = vec![0.0; rows * d_in];
                    kernels::gemm_acc(g, self.value(*weight).data(), &mut dx, *rows, *d_out, *d_in);
                    send(*input, dx);
                }
                if self.rg(*weight) {
                    let mut dw = vec![0.0; d_out * d_in];
                    kernels::gemm_at_acc(g, self.value(*input).data(), &mut dw, *rows, *d_out, *d_in);
                    send(*weight, dw);
                }
                if let Some(b) = bias {
                    let mut db = vec![0.0; *d_out];
                    for r in 0..*rows {
                        for (acc, gi) in db.iter_mut().zip(&g[r * d_out..(r + 1) * d_out]) {
                            *acc += gi;
                        }
                    }
                    send(*b, db);
                }
            }
            Op::GlobalAvgPool { input, hw } => {
                let inv = 1.0 / *hw as f64;
                let mut dx = Vec::with_capacity(g.len() * hw);
                for &gi in g {
                    dx.extend(std::iter::repeat(gi * inv).take(*hw));
                }
                send(*input, dx);
            }
            Op::GatherRows { input, rows, width } => {
                let mut dx = vec![0.0; self.value(*input).len()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..*width {
                        dx[r * width + j] += g[k * width + j];
                    }
                }
                send(*input, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                send(*x, vec![g[0]; n]);
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let k = 2.0 * g[0] / p.len() as f64;
                send(*pred, p.iter().zip(target).map(|(a, b)| k * (a - b)).collect());
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
        }
    }
}

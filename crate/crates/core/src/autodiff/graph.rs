use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{gemm, Lu};
use crate::{Error, Result, Tensor};

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    batch: usize,
    in_ch: usize,
    height: usize,
    width: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Broadcast(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Exp(Var),
    LogFloor(Var, f64),
    Sqrt(Var),
    SoftmaxRows(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
    Conv2d { input: Var, kernels: Var, bias: Var, cols: Vec<f64>, geo: ConvGeometry },
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    PairwiseSqDist(Var),
    SelectRows(Var, Vec<usize>),
    Reshape(Var),
    Solve { a: Var, b: Var, lu: Lu },
    Trace(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A define-by-run tape. Nodes are appended in evaluation order, which is a
/// topological order, so the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Gradient of `var`; all zeros when `var` does not influence the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// Repeats a scalar into a tensor of the given shape.
    pub fn broadcast(&mut self, scalar: Var, shape: &[usize]) -> Result<Var> {
        let s = self.value(scalar);
        if !s.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                left: s.shape().to_vec(),
                right: vec![1],
            });
        }
        let value = Tensor::full(shape, s.data()[0]);
        let rg = self.rg(&[scalar]);
        Ok(self.push(value, Op::Broadcast(scalar), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// Affine map `x Wᵀ + b` with `W: out x in`, `b: out`, `x: batch x in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (batch, inp) = match *tx.shape() {
            [n, d] => (n, d),
            _ => return Err(mismatch("linear input", tx, tw)),
        };
        let (out, win) = match *tw.shape() {
            [o, i] => (o, i),
            _ => return Err(mismatch("linear weights", tw, tx)),
        };
        if win != inp {
            return Err(mismatch("linear", tw, tx));
        }
        if tb.len() != out {
            return Err(mismatch("linear bias", tb, tw));
        }
        let mut data = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            data.extend_from_slice(tb.data());
        }
        gemm(batch, inp, out, tx.data(), false, tw.data(), true, &mut data);
        let value = Tensor::new(vec![batch, out], data)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), libm::exp)
    }

    /// `ln(max(x, floor))`; the gradient vanishes below the floor.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::LogFloor(a, floor), move |x| libm::log(x.max(floor)))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), libm::sqrt)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.dims2()?;
        let mut data = t.data().to_vec();
        for r in 0..rows {
            softmax_in_place(&mut data[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    pub fn activate(&mut self, a: Var, activation: Activation) -> Result<Var> {
        match activation {
            Activation::Identity => Ok(a),
            Activation::Relu => Ok(self.relu(a)),
            Activation::Softmax => self.softmax_rows(a),
        }
    }

    /// Dense layer: affine map followed by `activation`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var, activation: Activation) -> Result<Var> {
        let z = self.linear(x, w, b)?;
        self.activate(z, activation)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, cols) = t.dims2()?;
        if labels.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy labels",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: cols,
            });
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
            loss += lse - row[labels[r]];
            softmax_in_place(&mut probs[r * cols..(r + 1) * cols]);
        }
        let probs = Tensor::new(t.shape().to_vec(), probs)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / rows as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Valid (unpadded) stride-1 cross-correlation.
    ///
    /// `input: batch x C x H x W`, `kernels: O x C x kh x kw`, `bias: O`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (ti, tk, tb) = (self.value(input), self.value(kernels), self.value(bias));
        let (batch, in_ch, height, width) = match *ti.shape() {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(mismatch("conv2d input", ti, tk)),
        };
        let (out_ch, k_in, kh, kw) = match *tk.shape() {
            [o, c, h, w] => (o, c, h, w),
            _ => return Err(mismatch("conv2d kernels", tk, ti)),
        };
        if k_in != in_ch {
            return Err(mismatch("conv2d channels", tk, ti));
        }
        if tb.len() != out_ch {
            return Err(mismatch("conv2d bias", tb, tk));
        }
        if height < kh || width < kw {
            return Err(Error::InputTooSmall {
                input: ti.shape().to_vec(),
                kernel: tk.shape().to_vec(),
            });
        }
        let geo = ConvGeometry {
            batch,
            in_ch,
            height,
            width,
            out_ch,
            kh,
            kw,
            oh: height - kh + 1,
            ow: width - kw + 1,
        };
        let cols = im2col(ti.data(), &geo);
        let rows = batch * geo.oh * geo.ow;
        let patch = in_ch * kh * kw;
        let mut out_mat = vec![0.0; rows * out_ch];
        gemm(rows, patch, out_ch, &cols, false, tk.data(), true, &mut out_mat);
        let plane = geo.oh * geo.ow;
        let mut data = vec![0.0; batch * out_ch * plane];
        for b in 0..batch {
            for p in 0..plane {
                let r = b * plane + p;
                for o in 0..out_ch {
                    data[(b * out_ch + o) * plane + p] = out_mat[r * out_ch + o] + tb.data()[o];
                }
            }
        }
        let value = Tensor::new(vec![batch, out_ch, geo.oh, geo.ow], data)?;
        let rg = self.rg(&[input, kernels, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                bias,
                cols,
                geo,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Row sums of a matrix as a column vector.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.dims2()?;
        let data = (0..rows)
            .map(|r| t.data()[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let value = Tensor::new(vec![rows, 1], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::RowSums(a), rg))
    }

    /// Matrix of squared Euclidean distances between the rows of `a`.
    pub fn pairwise_sq_dist(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, d) = t.dims2()?;
        let x = t.data();
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            for j in i + 1..m {
                let mut s = 0.0;
                for k in 0..d {
                    let diff = x[i * d + k] - x[j * d + k];
                    s += diff * diff;
                }
                data[i * m + j] = s;
                data[j * m + i] = s;
            }
        }
        let value = Tensor::new(vec![m, m], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::PairwiseSqDist(a), rg))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select_rows(idx);
        let rg = self.rg(&[a]);
        self.push(value, Op::SelectRows(a, idx.to_vec()), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// `X = A⁻¹ B` via LU with partial pivoting; differentiable in both
    /// arguments.
    pub fn solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let lu = Lu::factor(self.value(a))?;
        let value = lu.solve(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Solve { a, b, lu }, rg))
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        if r != c {
            return Err(Error::ShapeMismatch {
                op: "trace",
                left: t.shape().to_vec(),
                right: vec![r, r],
            });
        }
        let value = Tensor::scalar((0..r).map(|i| t.data()[i * r + i]).sum());
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Trace(a), rg))
    }
}

impl Graph {
    /// Reverse sweep from a scalar `loss`. The graph is not modified, so
    /// repeated calls return identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn with_data(&self, like: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.value(like).shape().to_vec(), data).expect("gradient shape follows node shape")
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let d = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, self.with_data(*a, d));
                }
                if self.requires_grad(*b) {
                    let d = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, self.with_data(*b, d));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let d = gd.iter().zip(vb).map(|(g, y)| g / y).collect();
                    self.accumulate(grads, *a, self.with_data(*a, d));
                }
                if self.requires_grad(*b) {
                    let d = gd
                        .iter()
                        .zip(va.iter().zip(vb))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    self.accumulate(grads, *b, self.with_data(*b, d));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| c * x)),
            Op::Broadcast(a) => self.accumulate(grads, *a, Tensor::scalar(g.sum())),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2()?;
                let (_, n) = tb.dims2()?;
                if self.requires_grad(*a) {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, tb.data(), true, &mut d);
                    self.accumulate(grads, *a, self.with_data(*a, d));
                }
                if self.requires_grad(*b) {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, gd, false, &mut d);
                    self.accumulate(grads, *b, self.with_data(*b, d));
                }
            }
            Op::Transpose(a) => {
                let t = g.transpose()?;
                self.accumulate(grads, *a, self.with_data(*a, t.into_data()));
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (batch, inp) = tx.dims2()?;
                let (out, _) = tw.dims2()?;
                if self.requires_grad(*x) {
                    let mut d = vec![0.0; batch * inp];
                    gemm(batch, out, inp, gd, false, tw.data(), false, &mut d);
                    self.accumulate(grads, *x, self.with_data(*x, d));
                }
                if self.requires_grad(*w) {
                    let mut d = vec![0.0; out * inp];
                    gemm(out, batch, inp, gd, true, tx.data(), false, &mut d);
                    self.accumulate(grads, *w, self.with_data(*w, d));
                }
                if self.requires_grad(*b) {
                    let mut d = vec![0.0; out];
                    for r in 0..batch {
                        for (o, acc) in d.iter_mut().enumerate() {
                            *acc += gd[r * out + o];
                        }
                    }
                    self.accumulate(grads, *b, self.with_data(*b, d));
                }
            }
            Op::Relu(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, &y)| if y > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *a, self.with_data(*a, d));
            }
            Op::Exp(a) => {
                let d = gd.iter().zip(node.value.data()).map(|(g, y)| g * y).collect();
                self.accumulate(grads, *a, self.with_data(*a, d));
            }
            Op::LogFloor(a, floor) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > *floor { g / x } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, self.with_data(*a, d));
            }
            Op::Sqrt(a) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, &y)| if y > 0.0 { g / (2.0 * y) } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, self.with_data(*a, d));
            }
            Op::SoftmaxRows(a) => {
                let (rows, cols) = node.value.dims2()?;
                let y = node.value.data();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let ys = &y[r * cols..(r + 1) * cols];
                    let gs = &gd[r * cols..(r + 1) * cols];
                    let inner: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    for c in 0..cols {
                        d[r * cols + c] = ys[c] * (gs[c] - inner);
                    }
                }
                self.accumulate(grads, *a, self.with_data(*a, d));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (rows, cols) = probs.dims2()?;
                let scale = gd[0] / rows as f64;
                let mut d: Vec<f64> = probs.data().iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * cols + l] -= scale;
                }
                self.accumulate(grads, *logits, self.with_data(*logits, d));
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                cols,
                geo,
            } => {
                let plane = geo.oh * geo.ow;
                let rows = geo.batch * plane;
                let patch = geo.in_ch * geo.kh * geo.kw;
                // Rearrange the output gradient to (position, channel).
                let mut gmat = vec![0.0; rows * geo.out_ch];
                for b in 0..geo.batch {
                    for o in 0..geo.out_ch {
                        let src = &gd[(b * geo.out_ch + o) * plane..(b * geo.out_ch + o + 1) * plane];
                        for (p, &v) in src.iter().enumerate() {
                            gmat[(b * plane + p) * geo.out_ch + o] = v;
                        }
                    }
                }
                if self.requires_grad(*kernels) {
                    let mut d = vec![0.0; geo.out_ch * patch];
                    gemm(geo.out_ch, rows, patch, &gmat, true, cols, false, &mut d);
                    self.accumulate(grads, *kernels, self.with_data(*kernels, d));
                }
                if self.requires_grad(*bias) {
                    let mut d = vec![0.0; geo.out_ch];
                    for r in 0..rows {
                        for (o, acc) in d.iter_mut().enumerate() {
                            *acc += gmat[r * geo.out_ch + o];
                        }
                    }
                    self.accumulate(grads, *bias, self.with_data(*bias, d));
                }
                if self.requires_grad(*input) {
                    let mut dcols = vec![0.0; rows * patch];
                    gemm(rows, geo.out_ch, patch, &gmat, false, self.value(*kernels).data(), false, &mut dcols);
                    let d = col2im(&dcols, geo);
                    self.accumulate(grads, *input, self.with_data(*input, d));
                }
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::full(shape, gd[0]));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(t.shape(), gd[0] / t.len() as f64));
            }
            Op::RowSums(a) => {
                let (rows, cols) = self.value(*a).dims2()?;
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols..(r + 1) * cols].fill(gd[r]);
                }
                self.accumulate(grads, *a, self.with_data(*a, d));
            }
            Op::PairwiseSqDist(a) => {
                let t = self.value(*a);
                let (m, dim) = t.dims2()?;
                let x = t.data();
                let mut d = vec![0.0; m * dim];
                for i in 0..m {
                    for j in 0..m {
                        if i == j {
                            continue;
                        }
                        let w = 2.0 * (gd[i * m + j] + gd[j * m + i]);
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..dim {
                            d[i * dim + k] += w * (x[i * dim + k] - x[j * dim + k]);
                        }
                    }
                }
                self.accumulate(grads, *a, self.with_data(*a, d));
            }
            Op::SelectRows(a, idx) => {
                let t = self.value(*a);
                let width = t.len() / t.shape()[0];
                let mut d = vec![0.0; t.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for k in 0..width {
                        d[i * width + k] += gd[r * width + k];
                    }
                }
                self.accumulate(grads, *a, self.with_data(*a, d));
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, self.with_data(*a, gd.to_vec()));
            }
            Op::Solve { a, b, lu } => {
                // X = A⁻¹B: dB = A⁻ᵀ dX, dA = -dB Xᵀ.
                let gb = lu.solve_transpose(g)?;
                if self.requires_grad(*a) {
                    let x = &node.value;
                    let (n, k) = x.dims2()?;
                    let mut d = vec![0.0; n * n];
                    gemm(n, k, n, gb.data(), false, x.data(), true, &mut d);
                    for v in d.iter_mut() {
                        *v = -*v;
                    }
                    self.accumulate(grads, *a, self.with_data(*a, d));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, self.with_data(*b, gb.into_data()));
                }
            }
            Op::Trace(a) => {
                let (n, _) = self.value(*a).dims2()?;
                let mut d = vec![0.0; n * n];
                for i in 0..n {
                    d[i * n + i] = gd[0];
                }
                self.accumulate(grads, *a, self.with_data(*a, d));
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn im2col(input: &[f64], geo: &ConvGeometry) -> Vec<f64> {
    let patch = geo.in_ch * geo.kh * geo.kw;
    let plane = geo.oh * geo.ow;
    let mut cols = vec![0.0; geo.batch * plane * patch];
    for b in 0..geo.batch {
        for y in 0..geo.oh {
            for x in 0..geo.ow {
                let row = (b * plane + y * geo.ow + x) * patch;
                for c in 0..geo.in_ch {
                    let base = ((b * geo.in_ch + c) * geo.height) * geo.width;
                    for dy in 0..geo.kh {
                        let src = base + (y + dy) * geo.width + x;
                        let dst = row + (c * geo.kh + dy) * geo.kw;
                        cols[dst..dst + geo.kw].copy_from_slice(&input[src..src + geo.kw]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], geo: &ConvGeometry) -> Vec<f64> {
    let patch = geo.in_ch * geo.kh * geo.kw;
    let plane = geo.oh * geo.ow;
    let mut out = vec![0.0; geo.batch * geo.in_ch * geo.height * geo.width];
    for b in 0..geo.batch {
        for y in 0..geo.oh {
            for x in 0..geo.ow {
                let row = (b * plane + y * geo.ow + x) * patch;
                for c in 0..geo.in_ch {
                    let base = ((b * geo.in_ch + c) * geo.height) * geo.width;
                    for dy in 0..geo.kh {
                        let dst = base + (y + dy) * geo.width + x;
                        let src = row + (c * geo.kh + dy) * geo.kw;
                        for dx in 0..geo.kw {
                            out[dst + dx] += cols[src + dx];
                        }
                    }
                }
            }
        }
    }
    out
}

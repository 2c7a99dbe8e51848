//! Reverse-mode tape.
//!
//! Every op validates its input shapes, computes its output eagerly, and
//! records enough context on the tape to run the vector-Jacobian product
//! later. Values must stay finite; the first op that produces a NaN or an
//! infinity fails with [`AutodiffError::NonFinite`].

use num_complex::Complex64;

use super::{gemm, AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The registered op kinds. Used by the gradient checker to prove coverage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    AddBias,
    Add,
    Mul,
    Scale,
    BroadcastAdd,
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
    Conv1d,
    Conv2d,
    MaxPool2,
    Embedding,
    Concat,
    Reshape,
    Slice,
    Subsample,
    GatherRows,
    WeightedSum,
    LstmCell,
    CrossEntropy,
    Sum,
    NormalizePower,
    ComplexScale,
}

impl OpKind {
    /// Every differentiable kind (everything except `Leaf`).
    pub const DIFFERENTIABLE: [OpKind; 25] = [
        OpKind::MatMul,
        OpKind::AddBias,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::BroadcastAdd,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Relu,
        OpKind::Softmax,
        OpKind::Conv1d,
        OpKind::Conv2d,
        OpKind::MaxPool2,
        OpKind::Embedding,
        OpKind::Concat,
        OpKind::Reshape,
        OpKind::Slice,
        OpKind::Subsample,
        OpKind::GatherRows,
        OpKind::WeightedSum,
        OpKind::LstmCell,
        OpKind::CrossEntropy,
        OpKind::Sum,
        OpKind::NormalizePower,
        OpKind::ComplexScale,
    ];
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    BroadcastAdd(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Conv1d(Var, Var),
    Conv2d(Var, Var),
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
    Subsample { x: Var, stride: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    WeightedSum(Var, Var),
    LstmCell { gates: Var, c_prev: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
    Sum(Var),
    NormalizePower { x: Var, scale: f64, energy: f64 },
    ComplexScale(Var, Complex64),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::BroadcastAdd(..) => OpKind::BroadcastAdd,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Relu(..) => OpKind::Relu,
            Op::Softmax(..) => OpKind::Softmax,
            Op::Conv1d(..) => OpKind::Conv1d,
            Op::Conv2d(..) => OpKind::Conv2d,
            Op::MaxPool2 { .. } => OpKind::MaxPool2,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::Concat { .. } => OpKind::Concat,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Slice { .. } => OpKind::Slice,
            Op::Subsample { .. } => OpKind::Subsample,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::WeightedSum(..) => OpKind::WeightedSum,
            Op::LstmCell { .. } => OpKind::LstmCell,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Sum(..) => OpKind::Sum,
            Op::NormalizePower { .. } => OpKind::NormalizePower,
            Op::ComplexScale(..) => OpKind::ComplexScale,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of the matching shape when the loss does
    /// not depend on it.
    pub fn get_or_zero(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

/// A single forward/backward recording.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn shape_err(msg: String) -> AutodiffError {
    AutodiffError::Shape(msg)
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    let last = shape.last().copied().unwrap_or(1);
    let rows = if last == 0 {
        0
    } else {
        shape.iter().product::<usize>() / last
    };
    (rows, last)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Kinds recorded on this tape, in recording order.
    pub fn kinds(&self) -> impl Iterator<Item = OpKind> + '_ {
        self.nodes.iter().map(|n| n.op.kind())
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite("leaf".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.leaf(value, true)
    }

    /// A constant leaf: no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(what.into()));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Mul(a, b)
            | Op::BroadcastAdd(a, b)
            | Op::Conv1d(a, b)
            | Op::Conv2d(a, b)
            | Op::WeightedSum(a, b)
            | Op::LstmCell { gates: a, c_prev: b } => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::Scale(x, _)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Softmax(x)
            | Op::MaxPool2 { x, .. }
            | Op::Reshape(x)
            | Op::Slice { x, .. }
            | Op::Subsample { x, .. }
            | Op::GatherRows { x, .. }
            | Op::Sum(x)
            | Op::NormalizePower { x, .. }
            | Op::ComplexScale(x, _)
            | Op::Embedding { table: x, .. }
            | Op::CrossEntropy { logits: x, .. } => self.nodes[x.0].needs_grad,
            Op::Concat { inputs, .. } => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.backward_done = false;
        Ok(Var(self.nodes.len() - 1))
    }

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm::matmul(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(shape_err(format!("add_bias {sx:?} + {sb:?}")));
        }
        let n = sb[0];
        let bias = self.data(b);
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias(x, b), "add_bias")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what} {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "add")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "mul")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AutodiffError> {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, Op::Scale(x, factor), "scale")
    }

    /// `x (B×T×F) + y (B×F)`, broadcasting `y` over the middle axis.
    pub fn broadcast_add(&mut self, x: Var, y: Var) -> Result<Var, AutodiffError> {
        let (sx, sy) = (self.shape(x), self.shape(y));
        if sx.len() != 3 || sy.len() != 2 || sx[0] != sy[0] || sx[2] != sy[1] {
            return Err(shape_err(format!("broadcast_add {sx:?} + {sy:?}")));
        }
        let (bsz, t, f) = (sx[0], sx[1], sx[2]);
        let yd = self.data(y);
        let mut out = self.value(x).clone();
        let od = out.data_mut();
        for b in 0..bsz {
            for s in 0..t {
                let base = (b * t + s) * f;
                for j in 0..f {
                    od[base + j] += yd[b * f + j];
                }
            }
        }
        self.push(out, Op::BroadcastAdd(x, y), "broadcast_add")
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, what: &str) -> Result<Var, AutodiffError> {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, op, what)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, f64::tanh, Op::Tanh(x), "tanh")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, sigmoid, Op::Sigmoid(x), "sigmoid")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, |v| v.max(0.0), Op::Relu(x), "relu")
    }

    /// Softmax over the last axis. With a mask, entries marked `false` get
    /// probability exactly zero; every row needs at least one valid entry.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var, AutodiffError> {
        let (rows, n) = split_last(self.shape(x));
        if let Some(m) = mask {
            if m.len() != rows * n {
                return Err(shape_err(format!(
                    "softmax mask length {} for shape {:?}",
                    m.len(),
                    self.shape(x)
                )));
            }
        }
        let xd = self.data(x);
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &xd[r * n..(r + 1) * n];
            let valid = |j: usize| mask.map_or(true, |m| m[r * n + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if valid(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(shape_err(format!("softmax row {r} has no valid entries")));
            }
            let mut total = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if valid(j) {
                    let e = (v - max).exp();
                    out[r * n + j] = e;
                    total += e;
                }
            }
            for o in &mut out[r * n..(r + 1) * n] {
                *o /= total;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(t, Op::Softmax(x), "softmax")
    }

    /// Same-padded 1-D convolution (cross-correlation).
    /// `x (B×T×Cin)`, `w (K×Cin×Cout)` with odd `K` → `B×T×Cout`.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var, AutodiffError> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[2] || sw[0] % 2 == 0 {
            return Err(shape_err(format!("conv1d {sx:?} * {sw:?}")));
        }
        let (bsz, t, cin) = (sx[0], sx[1], sx[2]);
        let (k, cout) = (sw[0], sw[2]);
        let half = (k / 2) as isize;
        let (xd, wd) = (self.data(x), self.data(w));
        let mut out = vec![0.0; bsz * t * cout];
        for b in 0..bsz {
            for s in 0..t {
                let o = &mut out[(b * t + s) * cout..(b * t + s + 1) * cout];
                for kk in 0..k {
                    let src = s as isize + kk as isize - half;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    let xi = &xd[(b * t + src as usize) * cin..(b * t + src as usize + 1) * cin];
                    for (c, &xv) in xi.iter().enumerate() {
                        let wr = &wd[(kk * cin + c) * cout..(kk * cin + c + 1) * cout];
                        for (ov, &wv) in o.iter_mut().zip(wr) {
                            *ov += xv * wv;
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![bsz, t, cout], out)?;
        self.push(t, Op::Conv1d(x, w), "conv1d")
    }

    /// Same-padded 2-D convolution, channels last.
    /// `x (B×H×W×Cin)`, `w (Kh×Kw×Cin×Cout)` with odd kernel sides.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var, AutodiffError> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 || sw[2] != sx[3] || sw[0] % 2 == 0 || sw[1] % 2 == 0 {
            return Err(shape_err(format!("conv2d {sx:?} * {sw:?}")));
        }
        let (bsz, h, wid, cin) = (sx[0], sx[1], sx[2], sx[3]);
        let (kh, kw, cout) = (sw[0], sw[1], sw[3]);
        let (xd, wd) = (self.data(x), self.data(w));
        let mut out = vec![0.0; bsz * h * wid * cout];
        for b in 0..bsz {
            for y in 0..h {
                for xx in 0..wid {
                    let obase = ((b * h + y) * wid + xx) * cout;
                    let o = &mut out[obase..obase + cout];
                    for ky in 0..kh {
                        let sy = y as isize + ky as isize - (kh / 2) as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let sxp = xx as isize + kx as isize - (kw / 2) as isize;
                            if sxp < 0 || sxp >= wid as isize {
                                continue;
                            }
                            let ibase = ((b * h + sy as usize) * wid + sxp as usize) * cin;
                            let wbase = (ky * kw + kx) * cin * cout;
                            for c in 0..cin {
                                let xv = xd[ibase + c];
                                if xv == 0.0 {
                                    continue;
                                }
                                let wr = &wd[wbase + c * cout..wbase + (c + 1) * cout];
                                for (ov, &wv) in o.iter_mut().zip(wr) {
                                    *ov += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![bsz, h, wid, cout], out)?;
        self.push(t, Op::Conv2d(x, w), "conv2d")
    }

    /// 2×2 max-pool over the two middle axes of `B×H×W×C`, ceil mode
    /// (a trailing odd row/column pools over what exists).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let sx = self.shape(x);
        if sx.len() != 4 {
            return Err(shape_err(format!("max_pool2 {sx:?}")));
        }
        let (bsz, h, wid, c) = (sx[0], sx[1], sx[2], sx[3]);
        let (oh, ow) = (h.div_ceil(2), wid.div_ceil(2));
        let xd = self.data(x);
        let mut out = vec![0.0; bsz * oh * ow * c];
        let mut argmax = vec![0usize; out.len()];
        for b in 0..bsz {
            for y in 0..oh {
                for xx in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = 0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let (sy, sxp) = (2 * y + dy, 2 * xx + dx);
                                if sy >= h || sxp >= wid {
                                    continue;
                                }
                                let i = ((b * h + sy) * wid + sxp) * c + ch;
                                if xd[i] > best {
                                    best = xd[i];
                                    best_i = i;
                                }
                            }
                        }
                        let o = ((b * oh + y) * ow + xx) * c + ch;
                        out[o] = best;
                        argmax[o] = best_i;
                    }
                }
            }
        }
        let t = Tensor::new(vec![bsz, oh, ow, c], out)?;
        self.push(t, Op::MaxPool2 { x, argmax }, "max_pool2")
    }

    /// Row lookup: `table (V×E)` at `ids` → `len(ids)×E`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(shape_err(format!("embedding table {st:?}")));
        }
        let (v, e) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(shape_err(format!("embedding id {bad} out of range {v}")));
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            out.extend_from_slice(&td[i * e..(i + 1) * e]);
        }
        let t = Tensor::new(vec![ids.len(), e], out)?;
        self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            "embedding",
        )
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = inputs
            .first()
            .ok_or_else(|| shape_err("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(format!("concat axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err(format!("concat {s:?} with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push(t, Op::Reshape(x), "reshape")
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] {
            return Err(shape_err(format!("slice {start}+{len} of axis {axis} in {sx:?}")));
        }
        let outer: usize = sx[..axis].iter().product();
        let inner: usize = sx[axis + 1..].iter().product();
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * sx[axis] + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::Slice { x, axis, start }, "slice")
    }

    /// Keeps every `stride`-th step of axis 1 (steps 0, s, 2s, …).
    pub fn subsample(&mut self, x: Var, stride: usize) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || stride == 0 {
            return Err(shape_err(format!("subsample {sx:?} by {stride}")));
        }
        let (bsz, t) = (sx[0], sx[1]);
        let inner: usize = sx[2..].iter().product();
        let ot = t.div_ceil(stride);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(bsz * ot * inner);
        for b in 0..bsz {
            for s in (0..t).step_by(stride) {
                let base = (b * t + s) * inner;
                out.extend_from_slice(&xd[base..base + inner]);
            }
        }
        let mut shape = sx;
        shape[1] = ot;
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::Subsample { x, stride }, "subsample")
    }

    /// Selects rows of a 2-D tensor (rows may repeat).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let sx = self.shape(x);
        if sx.len() != 2 {
            return Err(shape_err(format!("gather_rows {sx:?}")));
        }
        let (m, f) = (sx[0], sx[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(shape_err(format!("gather_rows row {bad} of {m}")));
        }
        let xd = self.data(x);
        let mut out = Vec::with_capacity(rows.len() * f);
        for &r in rows {
            out.extend_from_slice(&xd[r * f..(r + 1) * f]);
        }
        let t = Tensor::new(vec![rows.len(), f], out)?;
        self.push(
            t,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            "gather_rows",
        )
    }

    /// `Σ_t a[b,t]·h[b,t,:]` for `a (B×T)`, `h (B×T×F)` → `B×F`.
    pub fn weighted_sum(&mut self, a: Var, h: Var) -> Result<Var, AutodiffError> {
        let (sa, sh) = (self.shape(a), self.shape(h));
        if sa.len() != 2 || sh.len() != 3 || sa[0] != sh[0] || sa[1] != sh[1] {
            return Err(shape_err(format!("weighted_sum {sa:?} . {sh:?}")));
        }
        let (bsz, t, f) = (sh[0], sh[1], sh[2]);
        let (ad, hd) = (self.data(a), self.data(h));
        let mut out = vec![0.0; bsz * f];
        for b in 0..bsz {
            let o = &mut out[b * f..(b + 1) * f];
            for s in 0..t {
                let w = ad[b * t + s];
                if w == 0.0 {
                    continue;
                }
                let hr = &hd[(b * t + s) * f..(b * t + s + 1) * f];
                for (ov, hv) in o.iter_mut().zip(hr) {
                    *ov += w * hv;
                }
            }
        }
        let t = Tensor::new(vec![bsz, f], out)?;
        self.push(t, Op::WeightedSum(a, h), "weighted_sum")
    }

    /// Fused LSTM cell. `gates (B×4H)` in (input, forget, cell, output)
    /// order and `c_prev (B×H)` → `B×2H` holding `[h | c]`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var, AutodiffError> {
        let (sg, sc) = (self.shape(gates), self.shape(c_prev));
        if sg.len() != 2 || sc.len() != 2 || sg[0] != sc[0] || sg[1] != 4 * sc[1] {
            return Err(shape_err(format!("lstm_cell gates {sg:?}, c {sc:?}")));
        }
        let (bsz, hd) = (sc[0], sc[1]);
        let (gd, cd) = (self.data(gates), self.data(c_prev));
        let mut out = vec![0.0; bsz * 2 * hd];
        for b in 0..bsz {
            let g = &gd[b * 4 * hd..(b + 1) * 4 * hd];
            for j in 0..hd {
                let i = sigmoid(g[j]);
                let f = sigmoid(g[hd + j]);
                let cand = g[2 * hd + j].tanh();
                let o = sigmoid(g[3 * hd + j]);
                let c = f * cd[b * hd + j] + i * cand;
                out[b * 2 * hd + j] = o * c.tanh();
                out[b * 2 * hd + hd + j] = c;
            }
        }
        let t = Tensor::new(vec![bsz, 2 * hd], out)?;
        self.push(t, Op::LstmCell { gates, c_prev }, "lstm_cell")
    }

    /// Weighted mean token cross-entropy over rows of `logits (M×V)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var, AutodiffError> {
        let sl = self.shape(logits);
        if sl.len() != 2 || targets.len() != sl[0] || weights.len() != sl[0] {
            return Err(shape_err(format!(
                "cross_entropy logits {sl:?}, {} targets, {} weights",
                targets.len(),
                weights.len()
            )));
        }
        let (m, v) = (sl[0], sl[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(shape_err(format!("cross_entropy target {bad} of {v}")));
        }
        let total_w: f64 = weights.iter().sum();
        if total_w <= 0.0 {
            return Err(shape_err("cross_entropy with zero total weight".into()));
        }
        let ld = self.data(logits);
        let mut probs = vec![0.0; m * v];
        let mut loss = 0.0;
        for r in 0..m {
            let row = &ld[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            for p in &mut probs[r * v..(r + 1) * v] {
                *p /= z;
            }
            if weights[r] != 0.0 {
                loss += weights[r] * (max + z.ln() - row[targets[r]]);
            }
        }
        let t = Tensor::scalar(loss / total_w);
        self.push(
            t,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.iter().map(|w| w / total_w).collect(),
                probs,
            },
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    /// Scales interleaved (re, im) pairs so the mean complex power is 1.
    pub fn normalize_power(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let n = self.value(x).len();
        if n == 0 || n % 2 != 0 {
            return Err(shape_err(format!("normalize_power over {n} reals")));
        }
        let energy: f64 = self.data(x).iter().map(|v| v * v).sum();
        if energy <= 0.0 {
            return Err(AutodiffError::Degenerate("zero signal power".into()));
        }
        let scale = ((n / 2) as f64 / energy).sqrt();
        let data = self.data(x).iter().map(|v| v * scale).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, Op::NormalizePower { x, scale, energy }, "normalize_power")
    }

    /// Multiplies interleaved (re, im) pairs by a complex constant.
    pub fn complex_scale(&mut self, x: Var, h: Complex64) -> Result<Var, AutodiffError> {
        let n = self.value(x).len();
        if n % 2 != 0 {
            return Err(shape_err(format!("complex_scale over {n} reals")));
        }
        let xd = self.data(x);
        let mut out = vec![0.0; n];
        for (o, p) in out.chunks_mut(2).zip(xd.chunks(2)) {
            let y = h * Complex64::new(p[0], p[1]);
            o[0] = y.re;
            o[1] = y.im;
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(t, Op::ComplexScale(x, h), "complex_scale")
    }

    /// Reverse pass from a scalar `loss`. A second call without recording
    /// any new op is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (i, n) in self.nodes.iter().enumerate() {
            if !(matches!(n.op, Op::Leaf) && n.needs_grad) {
                grads[i] = None;
            }
        }
        self.backward_done = true;
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm::matmul(m, n, k, gd, false, self.data(*b), true, &mut da, false);
                    acc(*a, Tensor::new(vec![m, k], da).unwrap());
                }
                if wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm::matmul(k, m, n, self.data(*a), true, gd, false, &mut db, false);
                    acc(*b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    acc(*x, g.clone());
                }
                if wants(*b) {
                    let n = self.shape(*b)[0];
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*b, Tensor::from_vec(db));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Mul(a, b) => {
                let shape = g.shape().to_vec();
                if wants(*a) {
                    let d = gd.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect();
                    acc(*a, Tensor::new(shape.clone(), d).unwrap());
                }
                if wants(*b) {
                    let d = gd.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect();
                    acc(*b, Tensor::new(shape, d).unwrap());
                }
            }
            Op::Scale(x, f) => {
                let d = gd.iter().map(|v| v * f).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::BroadcastAdd(x, y) => {
                if wants(*x) {
                    acc(*x, g.clone());
                }
                if wants(*y) {
                    let s = self.shape(*x);
                    let (bsz, t, f) = (s[0], s[1], s[2]);
                    let mut dy = vec![0.0; bsz * f];
                    for b in 0..bsz {
                        for st in 0..t {
                            for j in 0..f {
                                dy[b * f + j] += gd[(b * t + st) * f + j];
                            }
                        }
                    }
                    acc(*y, Tensor::new(vec![bsz, f], dy).unwrap());
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Relu(x) => {
                let xd = self.data(*x);
                let d = gd
                    .iter()
                    .zip(xd)
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let (_, n) = split_last(node.value.shape());
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(n).zip(y.chunks(n)).zip(gd.chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Conv1d(x, w) => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (bsz, t, cin) = (sx[0], sx[1], sx[2]);
                let (k, cout) = (sw[0], sw[2]);
                let half = (k / 2) as isize;
                let (xd, wd) = (self.data(*x), self.data(*w));
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                for b in 0..bsz {
                    for s in 0..t {
                        let go = &gd[(b * t + s) * cout..(b * t + s + 1) * cout];
                        for kk in 0..k {
                            let src = s as isize + kk as isize - half;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let xbase = (b * t + src as usize) * cin;
                            for c in 0..cin {
                                let wbase = (kk * cin + c) * cout;
                                let wr = &wd[wbase..wbase + cout];
                                let xv = xd[xbase + c];
                                let mut sdx = 0.0;
                                for o in 0..cout {
                                    sdx += go[o] * wr[o];
                                    dw[wbase + o] += go[o] * xv;
                                }
                                dx[xbase + c] += sdx;
                            }
                        }
                    }
                }
                if wants(*x) {
                    acc(*x, Tensor::new(sx.to_vec(), dx).unwrap());
                }
                if wants(*w) {
                    acc(*w, Tensor::new(sw.to_vec(), dw).unwrap());
                }
            }
            Op::Conv2d(x, w) => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (bsz, h, wid, cin) = (sx[0], sx[1], sx[2], sx[3]);
                let (kh, kw, cout) = (sw[0], sw[1], sw[3]);
                let (xd, wd) = (self.data(*x), self.data(*w));
                let need_dx = wants(*x);
                let mut dx = vec![0.0; if need_dx { xd.len() } else { 0 }];
                let mut dw = vec![0.0; wd.len()];
                for b in 0..bsz {
                    for y in 0..h {
                        for xx in 0..wid {
                            let obase = ((b * h + y) * wid + xx) * cout;
                            let go = &gd[obase..obase + cout];
                            if go.iter().all(|v| *v == 0.0) {
                                continue;
                            }
                            for ky in 0..kh {
                                let sy = y as isize + ky as isize - (kh / 2) as isize;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let sxp = xx as isize + kx as isize - (kw / 2) as isize;
                                    if sxp < 0 || sxp >= wid as isize {
                                        continue;
                                    }
                                    let ibase = ((b * h + sy as usize) * wid + sxp as usize) * cin;
                                    let wbase = (ky * kw + kx) * cin * cout;
                                    for c in 0..cin {
                                        let xv = xd[ibase + c];
                                        let wrow = wbase + c * cout;
                                        if need_dx {
                                            let wr = &wd[wrow..wrow + cout];
                                            let mut s = 0.0;
                                            for (gv, wv) in go.iter().zip(wr) {
                                                s += gv * wv;
                                            }
                                            dx[ibase + c] += s;
                                        }
                                        if xv != 0.0 {
                                            for (dwv, gv) in dw[wrow..wrow + cout].iter_mut().zip(go) {
                                                *dwv += gv * xv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_dx {
                    acc(*x, Tensor::new(sx.to_vec(), dx).unwrap());
                }
                if wants(*w) {
                    acc(*w, Tensor::new(sw.to_vec(), dw).unwrap());
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (gv, &src) in gd.iter().zip(argmax) {
                    dx[src] += gv;
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx).unwrap());
            }
            Op::Embedding { table, ids } => {
                let e = self.shape(*table)[1];
                let mut dt = vec![0.0; self.value(*table).len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..e {
                        dt[id * e + j] += gd[r * e + j];
                    }
                }
                acc(*table, Tensor::new(self.shape(*table).to_vec(), dt).unwrap());
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.shape(v)[*axis] * inner;
                    if wants(v) {
                        let mut d = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            d.extend_from_slice(&gd[o * row + offset..o * row + offset + chunk]);
                        }
                        acc(v, Tensor::new(self.shape(v).to_vec(), d).unwrap());
                    }
                    offset += chunk;
                }
            }
            Op::Reshape(x) => {
                acc(*x, g.clone().reshaped(self.shape(*x)).unwrap());
            }
            Op::Slice { x, axis, start } => {
                let sx = self.shape(*x);
                let outer: usize = sx[..*axis].iter().product();
                let inner: usize = sx[axis + 1..].iter().product();
                let len = node.value.shape()[*axis];
                let mut dx = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    let dst = (o * sx[*axis] + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                acc(*x, Tensor::new(sx.to_vec(), dx).unwrap());
            }
            Op::Subsample { x, stride } => {
                let sx = self.shape(*x);
                let (bsz, t) = (sx[0], sx[1]);
                let inner: usize = sx[2..].iter().product();
                let ot = node.value.shape()[1];
                let mut dx = vec![0.0; self.value(*x).len()];
                for b in 0..bsz {
                    for (j, s) in (0..t).step_by(*stride).enumerate() {
                        let dst = (b * t + s) * inner;
                        let src = (b * ot + j) * inner;
                        dx[dst..dst + inner].copy_from_slice(&gd[src..src + inner]);
                    }
                }
                acc(*x, Tensor::new(sx.to_vec(), dx).unwrap());
            }
            Op::GatherRows { x, rows } => {
                let f = self.shape(*x)[1];
                let mut dx = vec![0.0; self.value(*x).len()];
                for (j, &r) in rows.iter().enumerate() {
                    for c in 0..f {
                        dx[r * f + c] += gd[j * f + c];
                    }
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx).unwrap());
            }
            Op::WeightedSum(a, h) => {
                let sh = self.shape(*h);
                let (bsz, t, f) = (sh[0], sh[1], sh[2]);
                let (ad, hd) = (self.data(*a), self.data(*h));
                if wants(*a) {
                    let mut da = vec![0.0; bsz * t];
                    for b in 0..bsz {
                        for s in 0..t {
                            let hr = &hd[(b * t + s) * f..(b * t + s + 1) * f];
                            da[b * t + s] = hr.iter().zip(&gd[b * f..(b + 1) * f]).map(|(x, y)| x * y).sum();
                        }
                    }
                    acc(*a, Tensor::new(vec![bsz, t], da).unwrap());
                }
                if wants(*h) {
                    let mut dh = vec![0.0; hd.len()];
                    for b in 0..bsz {
                        for s in 0..t {
                            let w = ad[b * t + s];
                            for j in 0..f {
                                dh[(b * t + s) * f + j] = w * gd[b * f + j];
                            }
                        }
                    }
                    acc(*h, Tensor::new(sh.to_vec(), dh).unwrap());
                }
            }
            Op::LstmCell { gates, c_prev } => {
                let sc = self.shape(*c_prev);
                let (bsz, hd) = (sc[0], sc[1]);
                let (gdat, cd) = (self.data(*gates), self.data(*c_prev));
                let out = node.value.data();
                let mut dg = vec![0.0; bsz * 4 * hd];
                let mut dc_prev = vec![0.0; bsz * hd];
                for b in 0..bsz {
                    let gr = &gdat[b * 4 * hd..(b + 1) * 4 * hd];
                    for j in 0..hd {
                        let i = sigmoid(gr[j]);
                        let f = sigmoid(gr[hd + j]);
                        let cand = gr[2 * hd + j].tanh();
                        let o = sigmoid(gr[3 * hd + j]);
                        let c = out[b * 2 * hd + hd + j];
                        let tc = c.tanh();
                        let dh = gd[b * 2 * hd + j];
                        let dc = gd[b * 2 * hd + hd + j] + dh * o * (1.0 - tc * tc);
                        let base = b * 4 * hd;
                        dg[base + j] = dc * cand * i * (1.0 - i);
                        dg[base + hd + j] = dc * cd[b * hd + j] * f * (1.0 - f);
                        dg[base + 2 * hd + j] = dc * i * (1.0 - cand * cand);
                        dg[base + 3 * hd + j] = dh * tc * o * (1.0 - o);
                        dc_prev[b * hd + j] = dc * f;
                    }
                }
                if wants(*gates) {
                    acc(*gates, Tensor::new(vec![bsz, 4 * hd], dg).unwrap());
                }
                if wants(*c_prev) {
                    acc(*c_prev, Tensor::new(vec![bsz, hd], dc_prev).unwrap());
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let v = self.shape(*logits)[1];
                let scale = gd[0];
                let mut d = probs.clone();
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let row = &mut d[r * v..(r + 1) * v];
                    row[t] -= 1.0;
                    for x in row.iter_mut() {
                        *x *= w * scale;
                    }
                }
                acc(*logits, Tensor::new(self.shape(*logits).to_vec(), d).unwrap());
            }
            Op::Sum(x) => {
                acc(*x, Tensor::filled(self.shape(*x), gd[0]));
            }
            Op::NormalizePower { x, scale, energy } => {
                let xd = self.data(*x);
                let dot: f64 = xd.iter().zip(gd).map(|(a, b)| a * b).sum();
                let d = xd
                    .iter()
                    .zip(gd)
                    .map(|(xv, gv)| scale * gv - scale * xv * dot / energy)
                    .collect();
                acc(*x, Tensor::new(self.shape(*x).to_vec(), d).unwrap());
            }
            Op::ComplexScale(x, h) => {
                let hc = h.conj();
                let mut d = vec![0.0; gd.len()];
                for (o, p) in d.chunks_mut(2).zip(gd.chunks(2)) {
                    let y = hc * Complex64::new(p[0], p[1]);
                    o[0] = y.re;
                    o[1] = y.im;
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), d).unwrap());
            }
        }
    }
}

//! Define-by-run computation graph.
//!
//! Every operation appends a node holding its forward value and the tag of
//! its backward rule. Node indices increase in recording order, so walking
//! the node list backwards is a valid reverse topological order.

use std::fmt;
use std::rc::Rc;

use super::{AutodiffError, Tensor};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum UnaryKind {
    Neg,
    Scale(f64),
    Offset(f64),
    Tanh,
    Sigmoid,
    Relu,
    Log,
    Exp,
    Sqrt,
    Square,
    ClampMin(f64),
}

type Derivative = Rc<dyn Fn(f64) -> f64>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    Map(Var, Derivative),
    Softmax(Var),
    Conv2d { input: Var, kernels: Var, stride: usize },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    Transpose(Var),
    Slice { input: Var, axis: usize, start: usize },
    Sum(Var),
    AddRow(Var, Var),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Binary(..) => "binary",
            Op::Unary(..) => "unary",
            Op::Map(..) => "map",
            Op::Softmax(..) => "softmax",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::Concat { .. } => "concat",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::Slice { .. } => "slice",
            Op::Sum(..) => "sum",
            Op::AddRow(..) => "add_row",
        };
        f.write_str(tag)
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A recorded computation. Build one per forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    checked: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// New graph in checked mode: non-finite results and `log` of
    /// non-positive values are reported as errors.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
        }
    }

    /// New graph with the finiteness and domain guards disabled.
    pub fn unchecked() -> Self {
        Self {
            nodes: Vec::new(),
            checked: false,
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked
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

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copies the current value of `v` into a fresh leaf, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        if self.checked {
            if let Some(index) = value.data().iter().position(|v| !v.is_finite()) {
                return Err(AutodiffError::NonFinite { op: op_name, index });
            }
        }
        Ok(self.push(value, op))
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let out = matmul_raw(av, false, bv, false);
        self.push_checked("matmul", out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = if av.shape() == bv.shape() || bv.is_scalar() {
            av.shape().to_vec()
        } else if av.is_scalar() {
            bv.shape().to_vec()
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op: binary_name(kind),
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        };
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let data = (0..n)
            .map(|i| {
                let (x, y) = (pick(ad, i), pick(bd, i));
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let out = Tensor::from_parts(shape, data);
        self.push_checked(binary_name(kind), out, Op::Binary(kind, a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(UnaryKind::Neg, a)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        self.unary(UnaryKind::Scale(factor), a)
    }

    /// Adds a constant.
    pub fn offset(&mut self, a: Var, shift: f64) -> Result<Var, AutodiffError> {
        self.unary(UnaryKind::Offset(shift), a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if self.checked {
            if let Some((index, &value)) = self.value(a).data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
                return Err(AutodiffError::Domain { op: "log", index, value });
            }
        }
        self.unary(UnaryKind::Log, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, AutodiffError> {
        if self.checked {
            if let Some((index, &value)) = self.value(a).data().iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(AutodiffError::Domain { op: "sqrt", index, value });
            }
        }
        self.unary(UnaryKind::Sqrt, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(UnaryKind::Square, a)
    }

    /// `max(a, floor)` elementwise; the gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var, AutodiffError> {
        self.unary(UnaryKind::ClampMin(floor), a)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var, AutodiffError> {
        let f: fn(f64, UnaryKind) -> f64 = |x, k| match k {
            UnaryKind::Neg => -x,
            UnaryKind::Scale(c) => c * x,
            UnaryKind::Offset(c) => x + c,
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::Log => x.ln(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Square => x * x,
            UnaryKind::ClampMin(c) => x.max(c),
        };
        let out = self.value(a).map(|x| f(x, kind));
        self.push_checked(unary_name(kind), out, Op::Unary(kind, a))
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        derivative: impl Fn(f64) -> f64 + 'static,
    ) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f);
        self.push_checked("map", out, Op::Map(a, Rc::new(derivative)))
    }

    /// Softmax along the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let n = *av.shape().last().expect("tensor rank >= 1");
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push_checked("softmax", out, Op::Softmax(a))
    }

    /// Valid-padding 2-D convolution (cross-correlation) of a `[C×H×W]` input
    /// with `[F×C×kh×kw]` kernels.
    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize) -> Result<Var, AutodiffError> {
        let (iv, kv) = (self.value(input), self.value(kernels));
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "conv2d",
            left: iv.shape().to_vec(),
            right: kv.shape().to_vec(),
        };
        if iv.rank() != 3 || kv.rank() != 4 || iv.shape()[0] != kv.shape()[1] {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(AutodiffError::Contract("conv2d stride must be positive".into()));
        }
        let geom = ConvGeom::new(iv.shape(), kv.shape(), stride)?;
        let mut out = vec![0.0; geom.f * geom.oh * geom.ow];
        let (id, kd) = (iv.data(), kv.data());
        for f in 0..geom.f {
            for c in 0..geom.c {
                for u in 0..geom.kh {
                    for v in 0..geom.kw {
                        let k = kd[geom.kidx(f, c, u, v)];
                        for i in 0..geom.oh {
                            let in_row = geom.iidx(c, i * stride + u, 0);
                            let out_row = (f * geom.oh + i) * geom.ow;
                            for j in 0..geom.ow {
                                out[out_row + j] += k * id[in_row + j * stride + v];
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![geom.f, geom.oh, geom.ow], out);
        self.push_checked("conv2d", out, Op::Conv2d { input, kernels, stride })
    }

    /// Non-overlapping max pooling over the two trailing axes of a
    /// `[C×H×W]` tensor. Trailing rows/columns that do not fill a window are
    /// dropped.
    pub fn max_pool2d(&mut self, input: Var, ph: usize, pw: usize) -> Result<Var, AutodiffError> {
        let iv = self.value(input);
        if iv.rank() != 3 || ph == 0 || pw == 0 || ph > iv.shape()[1] || pw > iv.shape()[2] {
            return Err(AutodiffError::ShapeMismatch {
                op: "max_pool2d",
                left: iv.shape().to_vec(),
                right: vec![ph, pw],
            });
        }
        let (c, h, w) = (iv.shape()[0], iv.shape()[1], iv.shape()[2]);
        let (oh, ow) = (h / ph, w / pw);
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        let d = iv.data();
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = usize::MAX;
                    for u in 0..ph {
                        for v in 0..pw {
                            let idx = (ch * h + i * ph + u) * w + j * pw + v;
                            if best == usize::MAX || d[idx] > d[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::from_parts(vec![c, oh, ow], out);
        self.push_checked("max_pool2d", out, Op::MaxPool2d { input, argmax })
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = inputs
            .first()
            .ok_or_else(|| AutodiffError::Contract("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::InvalidAxis { axis, rank: base.len() });
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::from_parts(shape, data);
        self.push_checked(
            "concat",
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.value(a).reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "transpose",
                left: av.shape().to_vec(),
                right: vec![],
            });
        }
        let out = transpose_raw(av);
        Ok(self.push(out, Op::Transpose(a)))
    }

    /// Takes `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let shape = av.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidAxis { axis, rank: shape.len() });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(AutodiffError::Contract(format!(
                "slice [{start}, {}) out of range for axis {axis} of {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&av.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.push(out, Op::Slice { input: a, axis, start }))
    }

    /// Sum of all elements as a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_checked("sum", out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Adds a length-`n` row to every row of an `[m×n]` matrix.
    pub fn add_row(&mut self, matrix: Var, row: Var) -> Result<Var, AutodiffError> {
        let (mv, rv) = (self.value(matrix), self.value(row));
        if mv.rank() != 2 || rv.len() != mv.shape()[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: mv.shape().to_vec(),
                right: rv.shape().to_vec(),
            });
        }
        let n = mv.shape()[1];
        let mut data = mv.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (x, b) in chunk.iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let out = Tensor::from_parts(mv.shape().to_vec(), data);
        self.push_checked("add_row", out, Op::AddRow(matrix, row))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, matmul_raw(g, false, bv, true));
                accumulate(grads, *b, matmul_raw(av, true, g, false));
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let n = g.len();
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                let mut ga = vec![0.0; n];
                let mut gb = vec![0.0; n];
                for k in 0..n {
                    let (x, y, gk) = (pick(av.data(), k), pick(bv.data(), k), g.data()[k]);
                    let (da, db) = match kind {
                        BinaryKind::Add => (1.0, 1.0),
                        BinaryKind::Sub => (1.0, -1.0),
                        BinaryKind::Mul => (y, x),
                        BinaryKind::Div => (1.0 / y, -x / (y * y)),
                    };
                    ga[k] = gk * da;
                    gb[k] = gk * db;
                }
                accumulate(grads, *a, reduce_broadcast(ga, av, g.shape()));
                accumulate(grads, *b, reduce_broadcast(gb, bv, g.shape()));
            }
            Op::Unary(kind, a) => {
                let av = self.value(*a);
                let data = av
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(g.data())
                    .map(|((&x, &y), &gk)| {
                        gk * match *kind {
                            UnaryKind::Neg => -1.0,
                            UnaryKind::Scale(c) => c,
                            UnaryKind::Offset(_) => 1.0,
                            UnaryKind::Tanh => 1.0 - y * y,
                            UnaryKind::Sigmoid => y * (1.0 - y),
                            UnaryKind::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Log => 1.0 / x,
                            UnaryKind::Exp => y,
                            UnaryKind::Sqrt => 0.5 / y,
                            UnaryKind::Square => 2.0 * x,
                            UnaryKind::ClampMin(c) => {
                                if x > c {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        }
                    })
                    .collect();
                accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), data));
            }
            Op::Map(a, derivative) => {
                let av = self.value(*a);
                let data = av.data().iter().zip(g.data()).map(|(&x, &gk)| gk * derivative(x)).collect();
                accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), data));
            }
            Op::Softmax(a) => {
                let n = *out.shape().last().expect("rank >= 1");
                let mut data = vec![0.0; out.len()];
                for ((dx, y), gr) in data.chunks_mut(n).zip(out.data().chunks(n)).zip(g.data().chunks(n)) {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..n {
                        dx[k] = y[k] * (gr[k] - dot);
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(out.shape().to_vec(), data));
            }
            Op::Conv2d { input, kernels, stride } => {
                let (iv, kv) = (self.value(*input), self.value(*kernels));
                let geom = ConvGeom::new(iv.shape(), kv.shape(), *stride).expect("validated in forward");
                let (id, kd, gd) = (iv.data(), kv.data(), g.data());
                let mut gi = vec![0.0; iv.len()];
                let mut gk = vec![0.0; kv.len()];
                for f in 0..geom.f {
                    for c in 0..geom.c {
                        for u in 0..geom.kh {
                            for v in 0..geom.kw {
                                let kidx = geom.kidx(f, c, u, v);
                                let k = kd[kidx];
                                let mut acc = 0.0;
                                for i in 0..geom.oh {
                                    let in_row = geom.iidx(c, i * stride + u, 0);
                                    let out_row = (f * geom.oh + i) * geom.ow;
                                    for j in 0..geom.ow {
                                        let go = gd[out_row + j];
                                        let ii = in_row + j * stride + v;
                                        acc += go * id[ii];
                                        gi[ii] += go * k;
                                    }
                                }
                                gk[kidx] += acc;
                            }
                        }
                    }
                }
                accumulate(grads, *input, Tensor::from_parts(iv.shape().to_vec(), gi));
                accumulate(grads, *kernels, Tensor::from_parts(kv.shape().to_vec(), gk));
            }
            Op::MaxPool2d { input, argmax } => {
                let iv = self.value(*input);
                let mut gi = vec![0.0; iv.len()];
                for (&src, &gk) in argmax.iter().zip(g.data()) {
                    gi[src] += gk;
                }
                accumulate(grads, *input, Tensor::from_parts(iv.shape().to_vec(), gi));
            }
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut offset = 0;
                for v in inputs {
                    let vs = self.value(*v).shape().to_vec();
                    let width = vs[*axis] * inner;
                    let mut data = Vec::with_capacity(outer * width);
                    for o in 0..outer {
                        let base = o * shape[*axis] * inner + offset;
                        data.extend_from_slice(&g.data()[base..base + width]);
                    }
                    offset += width;
                    accumulate(grads, *v, Tensor::from_parts(vs, data));
                }
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(grads, *a, Tensor::from_parts(shape, g.data().to_vec()));
            }
            Op::Transpose(a) => accumulate(grads, *a, transpose_raw(g)),
            Op::Slice { input, axis, start } => {
                let iv = self.value(*input);
                let shape = iv.shape();
                let len = out.shape()[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut gi = vec![0.0; iv.len()];
                for o in 0..outer {
                    let dst = (o * shape[*axis] + start) * inner;
                    let src = o * len * inner;
                    gi[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                accumulate(grads, *input, Tensor::from_parts(shape.to_vec(), gi));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                accumulate(grads, *a, Tensor::filled(shape, g.item()));
            }
            Op::AddRow(m, row) => {
                let rv = self.value(*row);
                let n = rv.len();
                let mut gr = vec![0.0; n];
                for chunk in g.data().chunks(n) {
                    for (acc, x) in gr.iter_mut().zip(chunk) {
                        *acc += x;
                    }
                }
                accumulate(grads, *m, g.clone());
                accumulate(grads, *row, Tensor::from_parts(rv.shape().to_vec(), gr));
            }
        }
    }
}

/// Gradients of a scalar with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Gradient for `v` if the loss depends on it.
    pub fn try_get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn reduce_broadcast(g: Vec<f64>, operand: &Tensor, out_shape: &[usize]) -> Tensor {
    if operand.shape() == out_shape {
        Tensor::from_parts(out_shape.to_vec(), g)
    } else {
        Tensor::from_parts(operand.shape().to_vec(), vec![g.iter().sum()])
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn binary_name(kind: BinaryKind) -> &'static str {
    match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div => "div",
    }
}

fn unary_name(kind: UnaryKind) -> &'static str {
    match kind {
        UnaryKind::Neg => "neg",
        UnaryKind::Scale(_) => "scale",
        UnaryKind::Offset(_) => "offset",
        UnaryKind::Tanh => "tanh",
        UnaryKind::Sigmoid => "sigmoid",
        UnaryKind::Relu => "relu",
        UnaryKind::Log => "log",
        UnaryKind::Exp => "exp",
        UnaryKind::Sqrt => "sqrt",
        UnaryKind::Square => "square",
        UnaryKind::ClampMin(_) => "clamp_min",
    }
}

/// `op(a) · op(b)` for rank-2 tensors, where `op` optionally transposes.
fn matmul_raw(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = if ta { ad[p * ac + i] } else { ad[i * ac + p] };
            if x == 0.0 {
                continue;
            }
            if tb {
                for (j, r) in row.iter_mut().enumerate() {
                    *r += x * bd[j * bc + p];
                }
            } else {
                let brow = &bd[p * bc..(p + 1) * bc];
                for (r, y) in row.iter_mut().zip(brow) {
                    *r += x * y;
                }
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

fn transpose_raw(a: &Tensor) -> Tensor {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Tensor::from_parts(vec![c, r], out)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(input: &[usize], kernels: &[usize], stride: usize) -> Result<Self, AutodiffError> {
        let (c, h, w) = (input[0], input[1], input[2]);
        let (f, kh, kw) = (kernels[0], kernels[2], kernels[3]);
        if kh > h || kw > w {
            return Err(AutodiffError::KernelTooLarge {
                input: input.to_vec(),
                kernel: kernels.to_vec(),
            });
        }
        Ok(Self {
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
        })
    }

    fn kidx(&self, f: usize, c: usize, u: usize, v: usize) -> usize {
        ((f * self.c + c) * self.kh + u) * self.kw + v
    }

    fn iidx(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.h + row) * self.w + col
    }
}

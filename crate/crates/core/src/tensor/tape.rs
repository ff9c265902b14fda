//! Reverse-mode tape. Every op appends a node holding its forward value and
//! what it needs for the backward pass; nodes are created in topological
//! order, so `backward` is a single reverse sweep.

use super::kernels::{self, ConvGeometry};
use super::{ParameterSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    MaxAxis {
        input: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    MeanAxis {
        input: Var,
        axis: usize,
    },
    Concat {
        a: Var,
        b: Var,
        axis: usize,
    },
    Reshape(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geo: ConvGeometry,
        batch: usize,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    L1 {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
    param: Option<String>,
}

/// A tape can be [`reset`](Tape::reset) and reused; buffers from the previous
/// pass are recycled, which matters when the same graph is rebuilt every step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    pool: Vec<Vec<f64>>,
}

/// An empty buffer with capacity for `n` values, recycled when possible.
fn take_buffer(pool: &mut Vec<Vec<f64>>, n: usize) -> Vec<f64> {
    let best = pool
        .iter()
        .enumerate()
        .filter(|(_, b)| b.capacity() >= n)
        .min_by_key(|(_, b)| b.capacity())
        .map(|(i, _)| i);
    match best {
        Some(i) => {
            let mut b = pool.swap_remove(i);
            b.clear();
            b
        }
        None => Vec::with_capacity(n),
    }
}

fn take_zeroed(pool: &mut Vec<Vec<f64>>, n: usize) -> Vec<f64> {
    let mut b = take_buffer(pool, n);
    b.resize(n, 0.0);
    b
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node and gradient, keeping their storage for reuse.
    /// Buffers the previous pass left untouched are freed.
    pub fn reset(&mut self) {
        self.pool.clear();
        for node in self.nodes.drain(..) {
            self.pool.push(node.value);
        }
        self.pool.extend(self.grads.drain(..).flatten());
    }

    fn buffer(&mut self, n: usize) -> Vec<f64> {
        take_buffer(&mut self.pool, n)
    }

    fn zeroed(&mut self, n: usize) -> Vec<f64> {
        take_zeroed(&mut self.pool, n)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        shape: Vec<usize>,
        value: Vec<f64>,
        requires_grad: bool,
        op: Op,
        name: &'static str,
    ) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "{name} produced a non-finite value (output shape {shape:?})"
            )));
        }
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Copies a node out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("tape values are finite")
    }

    fn needs(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    // ------------------------------------------------------------ leaves

    /// Records a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let mut value = self.buffer(tensor.numel());
        value.extend_from_slice(tensor.data());
        self.nodes.push(Node {
            shape: tensor.shape().to_vec(),
            value,
            requires_grad: tensor.requires_grad(),
            op: Op::Leaf,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input (never differentiated).
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        let expected: usize = shape.iter().product();
        if expected != value.len() {
            return Err(Error::Dimension(format!(
                "constant of shape {shape:?} needs {expected} values, got {}",
                value.len()
            )));
        }
        self.push(shape, value, false, Op::Leaf, "constant")
    }

    /// Records a constant whose values are written by `fill` into a
    /// recycled buffer of the right length.
    pub fn constant_with(&mut self, shape: Vec<usize>, fill: impl FnOnce(&mut [f64])) -> Result<Var> {
        let mut value = self.zeroed(shape.iter().product());
        fill(&mut value);
        self.push(shape, value, false, Op::Leaf, "constant")
    }

    /// Records a named parameter as a differentiable leaf. After `backward`,
    /// [`Tape::accumulate_param_grads`] adds its gradient back into `params`.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        let t = params
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))?;
        let v = self.leaf(&t.clone().with_requires_grad(true));
        self.nodes[v.0].param = Some(name.to_string());
        Ok(v)
    }

    // ------------------------------------------------------------ ops

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = self.zeroed(m * n);
        kernels::gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        self.push(vec![m, n], out, rg, Op::MatMul(a, b), "matmul")
    }

    /// Output shape of a broadcasting binary op: the shorter shape must be a
    /// suffix of the longer one.
    fn broadcast_shape(&self, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (long, short) = if sa.len() >= sb.len() { (sa, sb) } else { (sb, sa) };
        if long[long.len() - short.len()..] != *short {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(long.to_vec())
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, name)?;
        let n: usize = shape.iter().product();
        let mut out = self.buffer(n);
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() >= vb.len() {
            for chunk in va.chunks_exact(vb.len().max(1)) {
                out.extend(chunk.iter().zip(vb).map(|(x, y)| f(*x, *y)));
            }
        } else {
            for chunk in vb.chunks_exact(va.len().max(1)) {
                out.extend(va.iter().zip(chunk).map(|(x, y)| f(*x, *y)));
            }
        }
        let rg = self.needs(a) || self.needs(b);
        self.push(shape, out, rg, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let mut out = self.buffer(self.value(a).len());
        out.extend(self.value(a).iter().map(|v| v * factor));
        let rg = self.needs(a);
        self.push(self.shape(a).to_vec(), out, rg, Op::Scale(a, factor), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let mut out = self.buffer(self.value(a).len());
        out.extend(self.value(a).iter().map(|&v| v.max(0.0)));
        let rg = self.needs(a);
        self.push(self.shape(a).to_vec(), out, rg, Op::Relu(a), "relu")
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        let rg = self.needs(a);
        self.push(vec![], vec![s], rg, Op::Sum(a), "sum")
    }

    fn check_axis(&self, a: Var, axis: usize, op: &'static str) -> Result<()> {
        let shape = self.shape(a);
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::Shape {
                op,
                lhs: shape.to_vec(),
                rhs: vec![axis],
            });
        }
        Ok(())
    }

    /// Maximum along `axis` (removed from the shape) plus the winning index
    /// along that axis for every output element. Ties go to the lowest index.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        self.check_axis(a, axis, "max_over_axis")?;
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value(a);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            let base = o * len * inner;
            let dst = &mut out[o * inner..(o + 1) * inner];
            let arg = &mut argmax[o * inner..(o + 1) * inner];
            for l in 0..len {
                let row = &x[base + l * inner..base + (l + 1) * inner];
                for i in 0..inner {
                    if row[i] > dst[i] {
                        dst[i] = row[i];
                        arg[i] = l;
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let rg = self.needs(a);
        let v = self.push(
            out_shape,
            out,
            rg,
            Op::MaxAxis {
                input: a,
                axis,
                argmax: argmax.clone(),
            },
            "max_over_axis",
        )?;
        Ok((v, argmax))
    }

    pub fn mean_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis, "mean_over_axis")?;
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                kernels::axpy(1.0, row, &mut out[o * inner..(o + 1) * inner]);
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let rg = self.needs(a);
        self.push(out_shape, out, rg, Op::MeanAxis { input: a, axis }, "mean_over_axis")
    }

    /// Joins `a` and `b` along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa
                .iter()
                .zip(&sb)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::Shape {
                op: "concat",
                lhs: sa,
                rhs: sb,
            });
        }
        let (outer, la, inner) = axis_split(&sa, axis);
        let lb = sb[axis];
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for o in 0..outer {
            out.extend_from_slice(&va[o * la * inner..(o + 1) * la * inner]);
            out.extend_from_slice(&vb[o * lb * inner..(o + 1) * lb * inner]);
        }
        let mut shape = sa;
        shape[axis] = la + lb;
        let rg = self.needs(a) || self.needs(b);
        self.push(shape, out, rg, Op::Concat { a, b, axis }, "concat")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let mut out = self.buffer(self.value(a).len());
        out.extend_from_slice(self.value(a));
        let rg = self.needs(a);
        self.push(shape, out, rg, Op::Reshape(a), "reshape")
    }

    /// 2-D cross-correlation. `input` is `[C,H,W]` or batched `[B,C,H,W]`;
    /// `kernel` is `[F,C,kh,kw]`. Output is `[F,H',W']` (or `[B,F,H',W']`).
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        let shape_err = || Error::Shape {
            op: "conv2d",
            lhs: si.clone(),
            rhs: sk.clone(),
        };
        let (batch, chw) = match si.len() {
            3 => (1, &si[..]),
            4 => (si[0], &si[1..]),
            _ => return Err(shape_err()),
        };
        if sk.len() != 4 || sk[1] != chw[0] || stride == 0 {
            return Err(shape_err());
        }
        if chw[1] + 2 * padding < sk[2] || chw[2] + 2 * padding < sk[3] {
            return Err(shape_err());
        }
        let geo = ConvGeometry {
            channels: chw[0],
            height: chw[1],
            width: chw[2],
            kh: sk[2],
            kw: sk[3],
            stride,
            padding,
        };
        let filters = sk[0];
        let (pl, ol) = (geo.patch_len(), geo.out_len());
        let in_len = geo.channels * geo.height * geo.width;
        // columns are rebuilt per sample (and again in backward) so the
        // working set stays in cache
        let mut cols = self.zeroed(pl * ol);
        let mut out = self.zeroed(batch * filters * ol);
        let (x, k) = (self.value(input), self.value(kernel));
        for b in 0..batch {
            geo.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
            kernels::gemm_nn(k, &cols, &mut out[b * filters * ol..(b + 1) * filters * ol], filters, pl, ol);
        }
        self.pool.push(cols);
        let mut shape = vec![filters, geo.out_height(), geo.out_width()];
        if si.len() == 4 {
            shape.insert(0, batch);
        }
        let rg = self.needs(input) || self.needs(kernel);
        self.push(
            shape,
            out,
            rg,
            Op::Conv2d {
                input,
                kernel,
                geo,
                batch,
            },
            "conv2d",
        )
    }

    /// Non-overlapping 2x2 max pooling over the last two axes (odd trailing
    /// rows/columns are dropped). Ties go to the first element in row-major order.
    pub fn max_pool2d(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 || shape[shape.len() - 2] < 2 || shape[shape.len() - 1] < 2 {
            return Err(Error::Shape {
                op: "max_pool2d",
                lhs: shape,
                rhs: vec![2, 2],
            });
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(a);
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let mut out_shape = shape;
        let r = out_shape.len();
        out_shape[r - 2] = oh;
        out_shape[r - 1] = ow;
        let rg = self.needs(a);
        self.push(out_shape, out, rg, Op::MaxPool2d { input: a, argmax }, "max_pool2d")
    }

    /// Mean absolute error between equal-shaped tensors, as a scalar.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(Error::Shape {
                op: "l1_loss",
                lhs: sp.to_vec(),
                rhs: st.to_vec(),
            });
        }
        let n = self.value(pred).len();
        if n == 0 {
            return Err(Error::Invalid("l1_loss on an empty batch".into()));
        }
        let total: f64 = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(p, t)| (p - t).abs())
            .sum();
        let rg = self.needs(pred) || self.needs(target);
        self.push(vec![], vec![total / n as f64], rg, Op::L1 { pred, target }, "l1_loss")
    }

    // ------------------------------------------------------------ backward

    /// Populates gradients of the scalar `loss` with respect to every node
    /// that requires one. Gradients from multiple uses of a node accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![],
            });
        }
        let mut pool = std::mem::take(&mut self.pool);
        pool.extend(self.grads.drain(..).flatten());
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut seed = take_buffer(&mut pool, 1);
        seed.push(1.0);
        grads[loss.0] = Some(seed);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                pool.push(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads, &mut pool);
            grads[i] = Some(g);
        }
        self.grads = grads;
        self.pool = pool;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds gradients of every parameter leaf into `params`.
    pub fn accumulate_param_grads(&self, params: &mut ParameterSet) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(name) = &node.param else { continue };
            let zeros;
            let g = match self.grads.get(i).and_then(|g| g.as_deref()) {
                Some(g) => g,
                None => {
                    zeros = vec![0.0; node.value.len()];
                    &zeros
                }
            };
            params
                .get_mut(name)
                .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))?
                .accumulate_grad(g)?;
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        pool: &mut Vec<Vec<f64>>,
    ) {
        let node = &self.nodes[i];
        let mut scratch = Vec::new();
        if let Op::Conv2d { geo, .. } = &node.op {
            scratch = take_zeroed(pool, geo.patch_len() * geo.out_len());
        }
        let mut send = |v: Var, contrib: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| take_zeroed(pool, self.nodes[v.0].value.len()));
            contrib(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, &|ga| kernels::gemm_nt(g, vb, ga, m, k, n));
                send(*b, &|gb| kernels::gemm_tn(va, g, gb, m, k, n));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                send(*a, &|ga| reduce_broadcast(g, ga, 1.0));
                send(*b, &|gb| reduce_broadcast(g, gb, sign));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, &|ga| mul_backward(g, vb, ga));
                send(*b, &|gb| mul_backward(g, va, gb));
            }
            Op::Scale(a, f) => send(*a, &|ga| kernels::axpy(*f, g, ga)),
            Op::Relu(a) => {
                let x = self.value(*a);
                send(*a, &|ga| {
                    for ((gi, xi), out) in g.iter().zip(x).zip(ga.iter_mut()) {
                        if *xi > 0.0 {
                            *out += gi;
                        }
                    }
                });
            }
            Op::Sum(a) => send(*a, &|ga| ga.iter_mut().for_each(|v| *v += g[0])),
            Op::MaxAxis {
                input,
                axis,
                argmax,
            } => {
                let (outer, len, inner) = axis_split(self.shape(*input), *axis);
                send(*input, &|gi| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let l = argmax[o * inner + i];
                            gi[(o * len + l) * inner + i] += g[o * inner + i];
                        }
                    }
                });
            }
            Op::MeanAxis { input, axis } => {
                let (outer, len, inner) = axis_split(self.shape(*input), *axis);
                let inv = 1.0 / len as f64;
                send(*input, &|gi| {
                    for o in 0..outer {
                        for l in 0..len {
                            let dst = &mut gi[(o * len + l) * inner..(o * len + l + 1) * inner];
                            kernels::axpy(inv, &g[o * inner..(o + 1) * inner], dst);
                        }
                    }
                });
            }
            Op::Concat { a, b, axis } => {
                let (outer, la, inner) = axis_split(self.shape(*a), *axis);
                let lb = self.shape(*b)[*axis];
                let total = la + lb;
                send(*a, &|ga| {
                    for o in 0..outer {
                        let src = &g[o * total * inner..(o * total + la) * inner];
                        kernels::axpy(1.0, src, &mut ga[o * la * inner..(o + 1) * la * inner]);
                    }
                });
                send(*b, &|gb| {
                    for o in 0..outer {
                        let src = &g[(o * total + la) * inner..(o + 1) * total * inner];
                        kernels::axpy(1.0, src, &mut gb[o * lb * inner..(o + 1) * lb * inner]);
                    }
                });
            }
            Op::Reshape(a) => send(*a, &|ga| kernels::axpy(1.0, g, ga)),
            Op::Conv2d {
                input,
                kernel,
                geo,
                batch,
            } => {
                let filters = self.shape(*kernel)[0];
                let (pl, ol) = (geo.patch_len(), geo.out_len());
                let in_len = geo.channels * geo.height * geo.width;
                let x = self.value(*input);
                let gcols = std::cell::RefCell::new(std::mem::take(&mut scratch));
                send(*kernel, &|gk| {
                    let mut cols = gcols.borrow_mut();
                    for b in 0..*batch {
                        geo.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
                        let gout = &g[b * filters * ol..(b + 1) * filters * ol];
                        kernels::gemm_nt(gout, &cols, gk, filters, pl, ol);
                    }
                });
                let k = self.value(*kernel);
                send(*input, &|gi| {
                    let mut gcols = gcols.borrow_mut();
                    for b in 0..*batch {
                        gcols.iter_mut().for_each(|v| *v = 0.0);
                        let gout = &g[b * filters * ol..(b + 1) * filters * ol];
                        kernels::gemm_tn(k, gout, &mut gcols[..], filters, pl, ol);
                        geo.col2im(&gcols, &mut gi[b * in_len..(b + 1) * in_len]);
                    }
                });
                pool.push(gcols.into_inner());
            }
            Op::MaxPool2d { input, argmax } => send(*input, &|gi| {
                for (o, &src) in argmax.iter().enumerate() {
                    gi[src] += g[o];
                }
            }),
            Op::L1 { pred, target } => {
                let (vp, vt) = (self.value(*pred), self.value(*target));
                let inv = g[0] / vp.len() as f64;
                let sign = |p: f64, t: f64| {
                    if p > t {
                        1.0
                    } else if p < t {
                        -1.0
                    } else {
                        0.0
                    }
                };
                send(*pred, &|gp| {
                    for ((o, p), t) in gp.iter_mut().zip(vp).zip(vt) {
                        *o += inv * sign(*p, *t);
                    }
                });
                send(*target, &|gt| {
                    for ((o, p), t) in gt.iter_mut().zip(vp).zip(vt) {
                        *o -= inv * sign(*p, *t);
                    }
                });
            }
        }
    }
}

/// `dst += g * other`, each of `g`, `other`, `dst` either full-size or a
/// repeated suffix block.
fn mul_backward(g: &[f64], other: &[f64], dst: &mut [f64]) {
    let block = other.len().min(dst.len());
    let (olen, dlen) = (other.len(), dst.len());
    for (gc, start) in g.chunks_exact(block).zip((0..).step_by(block)) {
        let oc = &other[start % olen..][..block];
        let dc = &mut dst[start % dlen..][..block];
        for ((d, gi), o) in dc.iter_mut().zip(gc).zip(oc) {
            *d += gi * o;
        }
    }
}

/// Accumulates `g` (full broadcast shape) into `dst`, summing over repeats
/// when `dst` is the shorter, broadcast operand.
fn reduce_broadcast(g: &[f64], dst: &mut [f64], sign: f64) {
    let n = dst.len();
    if n == g.len() {
        kernels::axpy(sign, g, dst);
    } else {
        for chunk in g.chunks_exact(n) {
            kernels::axpy(sign, chunk, dst);
        }
    }
}

//! Reverse-mode gradient tape over [`Tensor`] values.
//!
//! Every op appends a node holding its forward value; `backward` walks
//! the nodes once in reverse creation order. Nodes built only from
//! constants are untracked and never receive gradient.

use std::cell::RefCell;
use std::rc::Rc;

use super::dense::Tensor;
use super::kernels::{self, ConvDims, GroupNormDims};
use crate::error::{shape_err, Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Sigmoid(usize),
    Silu(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumAxis { src: usize, axis: usize },
    Mse(usize, usize),
    MatMul(usize, usize),
    Conv1d { x: usize, w: usize, b: usize, dims: ConvDims },
    AvgPool2(usize),
    Upsample2(usize),
    GroupNorm { x: usize, gamma: usize, dims: GroupNormDims, xhat: Vec<f64>, rstd: Vec<f64> },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { src: usize, axis: usize, start: usize },
    Reshape(usize),
    RepeatTrailing(usize),
    Transpose2(usize),
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    tracked: bool,
}

/// Single-threaded operation record. Create one per graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients of a scalar root with respect to tracked leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros if it received none.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all recorded nodes. Requires that no [`Var`] is alive.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// Gradient-tracked leaf.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// Untracked leaf; never receives gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let rv = &nodes[root.id].value;
        if rv.numel() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        if !nodes[root.id].tracked {
            return Err(Error::UntrackedRoot);
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::full(rv.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NanGradient { node: id });
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            for (input, contrib) in local_grads(&nodes, node, &g)? {
                if !nodes[input].tracked {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Output shape for an elementwise binary op, allowing scalar and
/// leading-axis broadcast.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b {
        return Ok(a.to_vec());
    }
    if nb == 1 || (b.len() <= a.len() && a.ends_with(b)) {
        return Ok(a.to_vec());
    }
    if na == 1 || (a.len() <= b.len() && b.ends_with(a)) {
        return Ok(b.to_vec());
    }
    Err(shape_err(op, a, b))
}

/// Sum `g` down to `n` elements using the modular broadcast rule.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    if n == g.numel() {
        return Tensor::new(shape.to_vec(), g.data().to_vec()).expect("same size");
    }
    let mut out = vec![0.0; n];
    for (i, v) in g.data().iter().enumerate() {
        out[i % n] += v;
    }
    Tensor::new(shape.to_vec(), out).expect("same size")
}

fn local_grads(nodes: &[Node], node: &Node, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let out = &node.value;
    let gd = g.data();
    Ok(match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![
            (*a, reduce_to(g, val(*a).shape())),
            (*b, reduce_to(g, val(*b).shape())),
        ],
        Op::Sub(a, b) => vec![
            (*a, reduce_to(g, val(*a).shape())),
            (*b, reduce_to(&g.scale(-1.0), val(*b).shape())),
        ],
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (na, nb) = (av.numel(), bv.numel());
            let ga = Tensor::from_fn(out.shape(), |i| gd[i] * bv.data()[i % nb]);
            let gb = Tensor::from_fn(out.shape(), |i| gd[i] * av.data()[i % na]);
            vec![(*a, reduce_to(&ga, av.shape())), (*b, reduce_to(&gb, bv.shape()))]
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (na, nb) = (av.numel(), bv.numel());
            let ga = Tensor::from_fn(out.shape(), |i| gd[i] / bv.data()[i % nb]);
            let gb = Tensor::from_fn(out.shape(), |i| {
                let d = bv.data()[i % nb];
                -gd[i] * av.data()[i % na] / (d * d)
            });
            vec![(*a, reduce_to(&ga, av.shape())), (*b, reduce_to(&gb, bv.shape()))]
        }
        Op::Neg(a) => vec![(*a, g.scale(-1.0))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MulScalar(a, c) => vec![(*a, g.scale(*c))],
        Op::Exp(a) => vec![(*a, g.zip_map(out, "exp", |gi, y| gi * y)?)],
        Op::Log(a) => vec![(*a, g.zip_map(val(*a), "log", |gi, x| gi / x)?)],
        Op::Sqrt(a) => vec![(*a, g.zip_map(out, "sqrt", |gi, y| gi * 0.5 / y)?)],
        Op::Sigmoid(a) => vec![(*a, g.zip_map(out, "sigmoid", |gi, s| gi * s * (1.0 - s))?)],
        Op::Silu(a) => {
            let x = val(*a);
            let gx = g.zip_map(x, "silu", |gi, x| {
                let s = 1.0 / (1.0 + (-x).exp());
                gi * (s + x * s * (1.0 - s))
            })?;
            vec![(*a, gx)]
        }
        Op::Clamp(a, lo, hi) => {
            let x = val(*a);
            let gx = g.zip_map(x, "clamp", |gi, x| if x < *lo || x > *hi { 0.0 } else { gi })?;
            vec![(*a, gx)]
        }
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), gd[0]))],
        Op::Mean(a) => {
            let x = val(*a);
            vec![(*a, Tensor::full(x.shape(), gd[0] / x.numel() as f64))]
        }
        Op::SumAxis { src, axis } => {
            let x = val(*src);
            let outer: usize = x.shape()[..*axis].iter().product();
            let ext = x.shape()[*axis];
            let inner: usize = x.shape()[axis + 1..].iter().product();
            let gx = Tensor::from_fn(x.shape(), |i| {
                let o = i / (ext * inner);
                let r = i % inner;
                gd[o * inner + r]
            });
            debug_assert_eq!(outer * inner, g.numel());
            vec![(*src, gx)]
        }
        Op::Mse(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let scale = 2.0 * gd[0] / av.numel() as f64;
            let ga = av.zip_map(bv, "mse", |x, y| scale * (x - y))?;
            let gb = ga.scale(-1.0);
            vec![(*a, ga), (*b, gb)]
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            let mut ga = vec![0.0; m * k];
            kernels::gemm(m, n, k, gd, false, bv.data(), true, 0.0, &mut ga);
            let mut gb = vec![0.0; k * n];
            kernels::gemm(k, m, n, av.data(), true, gd, false, 0.0, &mut gb);
            vec![
                (*a, Tensor::new(av.shape().to_vec(), ga)?),
                (*b, Tensor::new(bv.shape().to_vec(), gb)?),
            ]
        }
        Op::Conv1d { x, w, b, dims } => {
            let (xv, wv, bv) = (val(*x), val(*w), val(*b));
            let (dx, dw, db) = kernels::conv1d_backward(*dims, xv.data(), wv.data(), gd);
            vec![
                (*x, Tensor::new(xv.shape().to_vec(), dx)?),
                (*w, Tensor::new(wv.shape().to_vec(), dw)?),
                (*b, Tensor::new(bv.shape().to_vec(), db)?),
            ]
        }
        Op::AvgPool2(a) => {
            let x = val(*a);
            let gx = Tensor::from_fn(x.shape(), |i| 0.5 * gd[i / 2]);
            vec![(*a, gx)]
        }
        Op::Upsample2(a) => {
            let x = val(*a);
            let gx = Tensor::from_fn(x.shape(), |i| gd[2 * i] + gd[2 * i + 1]);
            vec![(*a, gx)]
        }
        Op::GroupNorm { x, gamma, dims, xhat, rstd } => {
            let gv = val(*gamma);
            let (dx, dg, _) = kernels::group_norm_backward(*dims, xhat, rstd, gv.data(), gd);
            vec![
                (*x, Tensor::new(val(*x).shape().to_vec(), dx)?),
                (*gamma, Tensor::new(gv.shape().to_vec(), dg)?),
            ]
        }
        Op::Concat { parts, axis } => {
            let mut res = Vec::with_capacity(parts.len());
            let mut start = 0;
            for &p in parts {
                let ext = val(p).shape()[*axis];
                res.push((p, g.slice_axis(*axis, start, start + ext)?));
                start += ext;
            }
            res
        }
        Op::Slice { src, axis, start } => {
            let x = val(*src);
            let outer: usize = x.shape()[..*axis].iter().product();
            let ext = x.shape()[*axis];
            let inner: usize = x.shape()[axis + 1..].iter().product();
            let len = g.shape()[*axis];
            let mut gx = Tensor::zeros(x.shape());
            let dst = gx.data_mut();
            for o in 0..outer {
                let src_off = o * len * inner;
                let dst_off = (o * ext + start) * inner;
                dst[dst_off..dst_off + len * inner].copy_from_slice(&gd[src_off..src_off + len * inner]);
            }
            vec![(*src, gx)]
        }
        Op::Reshape(a) => vec![(*a, g.clone().reshape(val(*a).shape())?)],
        Op::RepeatTrailing(a) => {
            let x = val(*a);
            let n = g.numel() / x.numel();
            let gx = Tensor::from_fn(x.shape(), |i| gd[i * n..(i + 1) * n].iter().sum());
            vec![(*a, gx)]
        }
        Op::Transpose2(a) => vec![(*a, g.transpose2()?)],
    })
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let tracked = self.is_tracked();
        self.tape.push(value, op, tracked)
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(name, a.shape(), b.shape())?;
        let (na, nb) = (a.numel(), b.numel());
        let out = Tensor::from_fn(&shape, |i| f(a.data()[i % na], b.data()[i % nb]));
        let tracked = self.is_tracked() || other.is_tracked();
        Ok(self.tape.push(out, op, tracked))
    }

    pub fn add(&self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "add", |a, b| a + b, Op::Add(self.id, o.id))
    }

    pub fn sub(&self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "sub", |a, b| a - b, Op::Sub(self.id, o.id))
    }

    pub fn mul(&self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "mul", |a, b| a * b, Op::Mul(self.id, o.id))
    }

    pub fn div(&self, o: Var<'t>) -> Result<Var<'t>> {
        self.binary(o, "div", |a, b| a / b, Op::Div(self.id, o.id))
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(self.value().scale(-1.0), Op::Neg(self.id))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v + c), Op::AddScalar(self.id))
    }

    pub fn mul_scalar(&self, c: f64) -> Var<'t> {
        self.unary(self.value().scale(c), Op::MulScalar(self.id, c))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn log(&self) -> Var<'t> {
        self.unary(self.value().map(f64::ln), Op::Log(self.id))
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(self.value().map(f64::sqrt), Op::Sqrt(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(self.value().map(|x| 1.0 / (1.0 + (-x).exp())), Op::Sigmoid(self.id))
    }

    pub fn silu(&self) -> Var<'t> {
        self.unary(self.value().map(|x| x / (1.0 + (-x).exp())), Op::Silu(self.id))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(self.value().map(|x| x.clamp(lo, hi)), Op::Clamp(self.id, lo, hi))
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(Tensor::scalar(self.value().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        self.unary(Tensor::scalar(self.value().mean()), Op::Mean(self.id))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(shape_err("sum_axis", x.shape(), &[axis]));
        }
        let outer: usize = x.shape()[..axis].iter().product();
        let ext = x.shape()[axis];
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let base = (o * ext + e) * inner;
                for r in 0..inner {
                    out[o * inner + r] += x.data()[base + r];
                }
            }
        }
        let mut shape: Vec<usize> = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.unary(Tensor::new(shape, out)?, Op::SumAxis { src: self.id, axis }))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let ext = self.value().shape().get(axis).copied().unwrap_or(1);
        Ok(self.sum_axis(axis)?.mul_scalar(1.0 / ext as f64))
    }

    /// `mean((self - other)^2)` as one node.
    pub fn mse(&self, o: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), o.value());
        if a.shape() != b.shape() {
            return Err(shape_err("mse", a.shape(), b.shape()));
        }
        let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let tracked = self.is_tracked() || o.is_tracked();
        Ok(self.tape.push(
            Tensor::scalar(s / a.numel() as f64),
            Op::Mse(self.id, o.id),
            tracked,
        ))
    }

    pub fn matmul(&self, o: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), o.value());
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        kernels::gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut c);
        let tracked = self.is_tracked() || o.is_tracked();
        Ok(self.tape.push(Tensor::new(vec![m, n], c)?, Op::MatMul(self.id, o.id), tracked))
    }

    /// 1-D convolution over `[batch, cin, len]` with an odd kernel and
    /// same-length zero padding.
    pub fn conv1d(&self, w: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (x, wv, bv) = (self.value(), w.value(), bias.value());
        if x.ndim() != 3 || wv.ndim() != 3 || wv.shape()[1] != x.shape()[1] || wv.shape()[2] % 2 == 0 {
            return Err(shape_err("conv1d", x.shape(), wv.shape()));
        }
        if bv.shape() != [wv.shape()[0]] {
            return Err(shape_err("conv1d bias", wv.shape(), bv.shape()));
        }
        let dims = ConvDims {
            batch: x.shape()[0],
            cin: x.shape()[1],
            cout: wv.shape()[0],
            len: x.shape()[2],
            ksize: wv.shape()[2],
        };
        let y = kernels::conv1d_forward(dims, x.data(), wv.data(), bv.data());
        let tracked = self.is_tracked() || w.is_tracked() || bias.is_tracked();
        Ok(self.tape.push(
            Tensor::new(vec![dims.batch, dims.cout, dims.len], y)?,
            Op::Conv1d { x: self.id, w: w.id, b: bias.id, dims },
            tracked,
        ))
    }

    /// Average pooling by 2 along the last axis.
    pub fn avg_pool2(&self) -> Result<Var<'t>> {
        let x = self.value();
        let last = *x.shape().last().unwrap_or(&0);
        if !last.is_multiple_of(2) || last == 0 {
            return Err(shape_err("avg_pool2", x.shape(), &[2]));
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = last / 2;
        let d = x.data();
        let out = Tensor::from_fn(&shape, |i| 0.5 * (d[2 * i] + d[2 * i + 1]));
        Ok(self.unary(out, Op::AvgPool2(self.id)))
    }

    /// Nearest-neighbour upsampling by 2 along the last axis.
    pub fn upsample2(&self) -> Var<'t> {
        let x = self.value();
        let mut shape = x.shape().to_vec();
        if let Some(l) = shape.last_mut() {
            *l *= 2;
        }
        let d = x.data();
        let out = Tensor::from_fn(&shape, |i| d[i / 2]);
        self.unary(out, Op::Upsample2(self.id))
    }

    /// Group normalization of `[batch, channels, len]` with per-channel
    /// affine `gamma`, `beta`.
    pub fn group_norm(&self, gamma: Var<'t>, beta: Var<'t>, groups: usize, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        if x.ndim() != 3 || groups == 0 || !x.shape()[1].is_multiple_of(groups) {
            return Err(shape_err("group_norm", x.shape(), &[groups]));
        }
        let c = x.shape()[1];
        if gamma.value().shape() != [c] || beta.value().shape() != [c] {
            return Err(shape_err("group_norm affine", x.shape(), &gamma.shape()));
        }
        let dims = GroupNormDims {
            batch: x.shape()[0],
            channels: c,
            len: x.shape()[2],
            groups,
            eps,
        };
        let zero_beta = vec![0.0; c];
        let (y, xhat, rstd) =
            kernels::group_norm_forward(dims, x.data(), gamma.value().data(), &zero_beta);
        let tracked = self.is_tracked() || gamma.is_tracked();
        let scaled = self.tape.push(
            Tensor::new(x.shape().to_vec(), y)?,
            Op::GroupNorm { x: self.id, gamma: gamma.id, dims, xhat, rstd },
            tracked,
        );
        scaled.add_channel_bias(beta)
    }

    /// Add a per-channel `[channels]` bias to `[batch, channels, len]`.
    pub fn add_channel_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        if x.ndim() != 3 || bias.value().shape() != [x.shape()[1]] {
            return Err(shape_err("add_channel_bias", x.shape(), &bias.shape()));
        }
        let len = x.shape()[2];
        let expanded = bias.repeat_trailing(len);
        self.add(expanded)
    }

    /// Append a trailing axis of extent `n`, repeating values along it.
    pub fn repeat_trailing(&self, n: usize) -> Var<'t> {
        let x = self.value();
        let mut shape = x.shape().to_vec();
        shape.push(n);
        let d = x.data();
        let out = Tensor::from_fn(&shape, |i| d[i / n]);
        self.unary(out, Op::RepeatTrailing(self.id))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat(&refs, axis)?;
        let tracked = parts.iter().any(|p| p.is_tracked());
        Ok(first.tape.push(
            out,
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            tracked,
        ))
    }

    /// `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let out = self.value().slice_axis(axis, start, end)?;
        Ok(self.unary(out, Op::Slice { src: self.id, axis, start }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let out = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(out, Op::Reshape(self.id)))
    }

    pub fn transpose2(&self) -> Result<Var<'t>> {
        let out = self.value().transpose2()?;
        Ok(self.unary(out, Op::Transpose2(self.id)))
    }

    /// Broadcast a scalar or leading-axis-compatible tensor to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        let zeros = self.tape.constant(Tensor::zeros(shape));
        let out = zeros.add(*self)?;
        if out.value().shape() != shape {
            return Err(shape_err("broadcast_to", &self.shape(), shape));
        }
        Ok(out)
    }
}

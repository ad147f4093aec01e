//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Ops are
//! appended in execution order, so inputs always precede their consumers and
//! [`Tape::backward`] can walk the list once in reverse. Leaves created with
//! `requires_grad = true` receive `dLoss/dLeaf`; repeated `backward` calls
//! without [`Tape::zero_grad`] add onto the stored gradients.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::kernels::{self, PatchGeom};
use crate::tensor::{
    broadcast_shape, check_shape, for_each_broadcast, inverse_axes, numel, permute_data, Tensor,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Gelu,
    Exp,
    Log,
}

#[derive(Clone, Debug)]
struct MatMulPlan {
    m: usize,
    k: usize,
    n: usize,
    /// Per output batch element: (offset into a, offset into b), in elements.
    offsets: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        plan: MatMulPlan,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f32,
    },
    Unary {
        kind: UnaryKind,
        a: Var,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    Softmax {
        a: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        normed: Vec<f32>,
        rstd: Vec<f32>,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        axes: Vec<usize>,
    },
    Gather {
        a: Var,
        index: Arc<[usize]>,
    },
    PatchConv {
        x: Var,
        kernel: Var,
        geom: PatchGeom,
    },
    PatchDeconv {
        x: Var,
        kernel: Var,
        geom: PatchGeom,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Layer-norm epsilon added to the variance.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---------------------------------------------------------------- ops

    /// Batched matrix product `[..., m, k] · [..., k, n]` with broadcast batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let (plan, out_shape) = if bb.is_empty() {
            // Shared right-hand matrix: fold the batch into the row count.
            let rows = numel(ba) * m;
            let mut shape = ba.to_vec();
            shape.extend([m, n]);
            (
                MatMulPlan {
                    m: rows,
                    k,
                    n,
                    offsets: vec![(0, 0)],
                },
                shape,
            )
        } else {
            let batch = broadcast_shape(ba, bb).ok_or_else(mismatch)?;
            let mut offsets = Vec::with_capacity(numel(&batch));
            // placeholders for scalar batch shapes
            let ba1 = if ba.is_empty() { vec![1] } else { ba.to_vec() };
            let bb1 = bb.to_vec();
            for_each_broadcast(&batch, &ba1, &bb1, |_, ia, ib| {
                offsets.push((ia * m * k, ib * k * n));
            });
            let mut shape = batch;
            shape.extend([m, n]);
            (MatMulPlan { m, k, n, offsets }, shape)
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0f32; numel(&out_shape)];
        let step = plan.m * plan.n;
        let mut acc = Vec::new();
        for (bi, &(oa, ob)) in plan.offsets.iter().enumerate() {
            kernels::matmul_acc(
                &av[oa..oa + plan.m * plan.k],
                &bv[ob..ob + plan.k * plan.n],
                &mut out[bi * step..(bi + 1) * step],
                plan.m,
                plan.k,
                plan.n,
                &mut acc,
            );
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MatMul { a, b, plan }, rg))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| TensorError::ShapeMismatch {
            op: match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
            },
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0f32; numel(&out_shape)];
        match kind {
            BinaryKind::Add => {
                for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = av[i] + bv[j])
            }
            BinaryKind::Sub => {
                for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = av[i] - bv[j])
            }
            BinaryKind::Mul => {
                for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = av[i] * bv[j])
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Binary { kind, a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v * factor).collect())
            .expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale { a, factor }, rg)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let t = self.value(a);
        let f: fn(f32) -> f32 = match kind {
            UnaryKind::Gelu => kernels::gelu,
            UnaryKind::Exp => f32::exp,
            UnaryKind::Log => f32::ln,
        };
        let out =
            Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Unary { kind, a }, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Gelu, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }

    /// Natural logarithm; non-positive inputs yield non-finite values.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Log, a)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_f64();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s as f32), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum_f64() / t.numel() as f64;
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s as f32), Op::Mean { a }, rg)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = vec![0f32; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| x[at(l)]).fold(f32::NEG_INFINITY, f32::max);
                let mut z = 0f64;
                for l in 0..len {
                    let e = ((x[at(l)] - max) as f64).exp();
                    out[at(l)] = e as f32;
                    z += e;
                }
                for l in 0..len {
                    out[at(l)] = (out[at(l)] as f64 / z) as f32;
                }
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Softmax {
                a,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Normalises over the last axis, then applies `gain * x + offset`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("rank >= 1");
        for p in [gain, offset] {
            if self.shape(p) != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(offset).data();
        let rows = xv.len() / d;
        let mut normed = vec![0f32; xv.len()];
        let mut rstd = vec![0f32; rows];
        let mut out = vec![0f32; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs as f32;
            for c in 0..d {
                let n = ((row[c] as f64 - mean) * rs) as f32;
                normed[r * d + c] = n;
                out[r * d + c] = n * g[c] + b[c];
            }
        }
        let rg = self.any_grad(&[x, gain, offset]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                offset,
                normed,
                rstd,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Reshape { a }, rg))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            out,
            Op::Permute {
                a,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(TensorError::AxisOutOfRange {
                op: "transpose",
                axis: 1,
                rank: r,
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    /// `out.flat[i] = a.flat[index[i]]`, reshaped to `shape`.
    ///
    /// The backward pass scatter-adds, so repeated indices are allowed.
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        check_shape("gather", shape)?;
        let src = self.value(a).data();
        if numel(shape) != index.len() {
            return Err(TensorError::InvalidShape {
                op: "gather",
                shape: shape.to_vec(),
                reason: format!("index has {} entries", index.len()),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(TensorError::InvalidShape {
                op: "gather",
                shape: self.shape(a).to_vec(),
                reason: format!("index {bad} out of range"),
            });
        }
        let out: Vec<f32> = index.iter().map(|&i| src[i]).collect();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Gather { a, index }, rg))
    }

    fn patch_geom(
        &self,
        op: &'static str,
        fine: &[usize],
        coarse_ch: usize,
        kernel: &[usize],
        patch: usize,
        rows: usize,
        cols: usize,
    ) -> Result<PatchGeom> {
        if kernel.len() != 4 || kernel[2] != patch || kernel[3] != patch {
            return Err(TensorError::InvalidShape {
                op,
                shape: kernel.to_vec(),
                reason: format!("kernel must be [D, C, {patch}, {patch}]"),
            });
        }
        Ok(PatchGeom {
            batch: fine[0],
            fine_channels: fine[1],
            coarse_channels: coarse_ch,
            patch,
            rows,
            cols,
        })
    }

    /// Non-overlapping convolution: `[B,C,H,W]` with kernel `[D,C,P,P]`
    /// and stride `(P,P)` gives `[B,D,H/P,W/P]`.
    pub fn patch_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 || ks[1] != xs[1] {
            return Err(TensorError::ShapeMismatch {
                op: "patch_conv",
                lhs: xs,
                rhs: ks,
            });
        }
        let p = ks[2];
        if !xs[2].is_multiple_of(p) || !xs[3].is_multiple_of(p) {
            return Err(TensorError::InvalidShape {
                op: "patch_conv",
                shape: xs.clone(),
                reason: format!("spatial dims not divisible by patch {p}"),
            });
        }
        let geom = self.patch_geom("patch_conv", &xs, ks[0], &ks, p, xs[2] / p, xs[3] / p)?;
        let out = kernels::patch_conv(self.value(x).data(), self.value(kernel).data(), geom);
        let shape = [xs[0], ks[0], geom.rows, geom.cols];
        let rg = self.any_grad(&[x, kernel]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::PatchConv { x, kernel, geom },
            rg,
        ))
    }

    /// Transposed non-overlapping convolution: `[B,D,h,w]` with kernel
    /// `[D,C,P,P]` gives `[B,C,hP,wP]`. Adjoint of [`Tape::patch_conv`]
    /// for the same kernel.
    pub fn patch_deconv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 || ks[0] != xs[1] || ks[2] != ks[3] {
            return Err(TensorError::ShapeMismatch {
                op: "patch_deconv",
                lhs: xs,
                rhs: ks,
            });
        }
        let p = ks[2];
        let fine = [xs[0], ks[1], xs[2] * p, xs[3] * p];
        let geom = self.patch_geom("patch_deconv", &fine, ks[0], &ks, p, xs[2], xs[3])?;
        let out = kernels::patch_deconv(self.value(x).data(), self.value(kernel).data(), geom);
        let rg = self.any_grad(&[x, kernel]);
        Ok(self.push(
            Tensor::new(fine, out)?,
            Op::PatchDeconv { x, kernel, geom },
            rg,
        ))
    }

    /// `x · wᵀ (+ bias)`, with `w` stored as `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let wt = self.transpose(w)?;
        let y = self.matmul(x, wt)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    // ----------------------------------------------------------- backward

    /// Propagates `d loss` to every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::UnknownVar(loss.0));
        }
        let ls = self.shape(loss);
        if numel(ls) != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(Tensor::new(node.value.shape(), g)?),
                }
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[idx];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut accumulate = |v: Var, f: &mut dyn FnMut(&mut [f32])| {
            if !needs(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, plan } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let mut acc = Vec::new();
                let mut t = Vec::new();
                accumulate(*a, &mut |da| {
                    // da = g · bᵀ
                    for (bi, &(oa, ob)) in plan.offsets.iter().enumerate() {
                        if bi == 0 || ob != plan.offsets[bi - 1].1 {
                            kernels::transpose_into(&bv[ob..ob + k * n], k, n, &mut t);
                        }
                        kernels::matmul_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &t,
                            &mut da[oa..oa + m * k],
                            m,
                            n,
                            k,
                            &mut acc,
                        );
                    }
                });
                accumulate(*b, &mut |db| {
                    // db = aᵀ · g
                    for (bi, &(oa, ob)) in plan.offsets.iter().enumerate() {
                        kernels::transpose_into(&av[oa..oa + m * k], m, k, &mut t);
                        kernels::matmul_acc(
                            &t,
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut db[ob..ob + k * n],
                            k,
                            m,
                            n,
                            &mut acc,
                        );
                    }
                });
            }
            Op::Binary { kind, a, b } => {
                let out_shape = node.value.shape();
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                accumulate(*a, &mut |da| match kind {
                    BinaryKind::Add | BinaryKind::Sub => {
                        for_each_broadcast(out_shape, sa, sb, |o, i, _| da[i] += g[o])
                    }
                    BinaryKind::Mul => {
                        for_each_broadcast(out_shape, sa, sb, |o, i, j| da[i] += g[o] * bv[j])
                    }
                });
                accumulate(*b, &mut |db| match kind {
                    BinaryKind::Add => {
                        for_each_broadcast(out_shape, sa, sb, |o, _, j| db[j] += g[o])
                    }
                    BinaryKind::Sub => {
                        for_each_broadcast(out_shape, sa, sb, |o, _, j| db[j] -= g[o])
                    }
                    BinaryKind::Mul => {
                        for_each_broadcast(out_shape, sa, sb, |o, i, j| db[j] += g[o] * av[i])
                    }
                });
            }
            Op::Scale { a, factor } => accumulate(*a, &mut |da| {
                da.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * factor)
            }),
            Op::Unary { kind, a } => {
                let x = self.value(*a).data();
                let y = node.value.data();
                accumulate(*a, &mut |da| {
                    for i in 0..da.len() {
                        let local = match kind {
                            UnaryKind::Gelu => kernels::gelu_grad(x[i]),
                            UnaryKind::Exp => y[i],
                            UnaryKind::Log => 1.0 / x[i],
                        };
                        da[i] += g[i] * local;
                    }
                })
            }
            Op::Sum { a } => accumulate(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean { a } => {
                let n = self.value(*a).numel() as f32;
                accumulate(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::Softmax {
                a,
                outer,
                len,
                inner,
            } => {
                let y = node.value.data();
                accumulate(*a, &mut |da| {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 =
                                (0..*len).map(|l| g[at(l)] as f64 * y[at(l)] as f64).sum();
                            for l in 0..*len {
                                da[at(l)] += (y[at(l)] as f64 * (g[at(l)] as f64 - dot)) as f32;
                            }
                        }
                    }
                })
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                normed,
                rstd,
            } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                let rows = normed.len() / d;
                accumulate(*x, &mut |dx| {
                    for r in 0..rows {
                        let gh: Vec<f64> =
                            (0..d).map(|c| g[r * d + c] as f64 * gv[c] as f64).collect();
                        let nr = &normed[r * d..(r + 1) * d];
                        let mean_g = gh.iter().sum::<f64>() / d as f64;
                        let mean_gx =
                            gh.iter().zip(nr).map(|(a, &b)| a * b as f64).sum::<f64>() / d as f64;
                        let rs = rstd[r] as f64;
                        for c in 0..d {
                            dx[r * d + c] +=
                                (rs * (gh[c] - mean_g - nr[c] as f64 * mean_gx)) as f32;
                        }
                    }
                });
                accumulate(*gain, &mut |dg| {
                    let mut acc = vec![0f64; d];
                    for r in 0..rows {
                        for c in 0..d {
                            acc[c] += g[r * d + c] as f64 * normed[r * d + c] as f64;
                        }
                    }
                    dg.iter_mut().zip(acc).for_each(|(o, s)| *o += s as f32);
                });
                accumulate(*offset, &mut |db| {
                    let mut acc = vec![0f64; d];
                    for r in 0..rows {
                        for c in 0..d {
                            acc[c] += g[r * d + c] as f64;
                        }
                    }
                    db.iter_mut().zip(acc).for_each(|(o, s)| *o += s as f32);
                });
            }
            Op::Reshape { a } => accumulate(*a, &mut |da| {
                da.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv)
            }),
            Op::Permute { a, axes } => {
                let back = permute_data(g, node.value.shape(), &inverse_axes(axes));
                accumulate(*a, &mut |da| {
                    da.iter_mut().zip(&back).for_each(|(d, &gv)| *d += gv)
                })
            }
            Op::Gather { a, index } => accumulate(*a, &mut |da| {
                for (o, &i) in index.iter().enumerate() {
                    da[i] += g[o];
                }
            }),
            Op::PatchConv { x, kernel, geom } => {
                let (xv, kv) = (self.value(*x).data(), self.value(*kernel).data());
                accumulate(*x, &mut |dx| {
                    kernels::patch_conv_grad(xv, kv, g, *geom, Some(dx), None)
                });
                accumulate(*kernel, &mut |dk| {
                    kernels::patch_conv_grad(xv, kv, g, *geom, None, Some(dk))
                });
            }
            Op::PatchDeconv { x, kernel, geom } => {
                let (xv, kv) = (self.value(*x).data(), self.value(*kernel).data());
                accumulate(*x, &mut |dx| {
                    kernels::patch_deconv_grad(xv, kv, g, *geom, Some(dx), None)
                });
                accumulate(*kernel, &mut |dk| {
                    kernels::patch_deconv_grad(xv, kv, g, *geom, None, Some(dk))
                });
            }
        }
    }
}

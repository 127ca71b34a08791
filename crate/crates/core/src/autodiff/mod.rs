//! A small tape-based reverse-mode differentiation engine with exactly the
//! primitives the registration networks need.
//!
//! A [`Graph`] records every operation eagerly (values are computed when the
//! node is created). [`Graph::backward`] walks the tape in reverse and returns
//! a fresh [`Gradients`] table, so the graph itself is never mutated by a
//! backward pass.

mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, relative_error};
pub use optim::{sgd_momentum_step, SgdMomentum};
pub use params::{ParamId, ParamStore};
pub use tensor::{numel, Scalar, Tensor};

use std::collections::HashMap;

use crate::error::{Error, Result};
use kernels::ConvGeom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv3d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    Upsample2 {
        x: NodeId,
    },
    Relu {
        x: NodeId,
    },
    LeakyRelu {
        x: NodeId,
        slope: f64,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Bmm {
        a: NodeId,
        b: NodeId,
    },
    Transpose {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: f64,
    },
    Concat {
        xs: Vec<NodeId>,
        axis: usize,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    SumAll {
        x: NodeId,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Nodes are stored in creation order, which is a
/// topological order by construction.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, NodeId>,
}

/// Per-node gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<ParamId, NodeId>,
}

impl<T: Scalar> Gradients<T> {
    pub fn node(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(&id).and_then(|&n| self.node(n))
    }

    /// Dense gradient list aligned with `store`; unused parameters get zeros.
    pub fn param_grads(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .iter()
            .map(|(id, _, t)| match self.param(id) {
                Some(g) => Tensor::new(t.shape().to_vec(), g.to_vec()).expect("grad shape"),
                None => Tensor::zeros(t.shape().to_vec()),
            })
            .collect()
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn add_scaled_into<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T], c: T) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a += b * c;
            }
        }
        None => *slot = Some(g.iter().map(|&b| b * c).collect()),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn next_id(&self) -> NodeId {
        NodeId(self.nodes.len())
    }

    fn mismatch(&self, detail: impl Into<String>) -> Error {
        Error::ShapeMismatch {
            node: Some(self.nodes.len()),
            detail: detail.into(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let id = self.next_id();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        id
    }

    /// A constant input (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> NodeId {
        let id = self.next_id();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        id
    }

    /// The leaf for a stored parameter; repeated calls return the same node,
    /// so shared weights accumulate into a single gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let n = self.leaf(store.get(id).clone(), true);
        self.params.insert(id, n);
        n
    }

    /// 3D convolution of `[N, Ci, D, H, W]` with a cubic `[Co, Ci, k, k, k]`
    /// kernel, zero padding and optional `[Co]` bias.
    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 5 || ws.len() != 5 || ws[2] != ws[3] || ws[3] != ws[4] || xs[1] != ws[1] {
            return Err(self.mismatch(format!("conv3d input {xs:?} with kernel {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(self.mismatch(format!(
                    "conv3d bias {:?} for {} outputs",
                    self.shape(b),
                    ws[0]
                )));
            }
        }
        let k = ws[2];
        let out_len = |l| kernels::conv_out_len(l, k, stride, pad);
        let (Some(od), Some(oh), Some(ow)) = (out_len(xs[2]), out_len(xs[3]), out_len(xs[4]))
        else {
            return Err(self.mismatch(format!(
                "conv3d kernel {k} stride {stride} pad {pad} on {xs:?}"
            )));
        };
        let geom = ConvGeom {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[0],
            input: [xs[2], xs[3], xs[4]],
            output: [od, oh, ow],
            kernel: k,
            stride,
            pad,
        };
        let mut out = Tensor::zeros(vec![xs[0], ws[0], od, oh, ow]);
        kernels::conv3d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            out.data_mut(),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv3d { x, w, b, geom }, &inputs))
    }

    /// Nearest-neighbour ×2 upsampling of a `[N, C, D, H, W]` map.
    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 5 {
            return Err(self.mismatch(format!("upsample2 expects 5-d input, got {xs:?}")));
        }
        let mut out = Tensor::zeros(vec![xs[0], xs[1], 2 * xs[2], 2 * xs[3], 2 * xs[4]]);
        kernels::upsample2_forward(
            self.value(x).data(),
            xs[0] * xs[1],
            [xs[2], xs[3], xs[4]],
            out.data_mut(),
        );
        Ok(self.push(out, Op::Upsample2 { x }, &[x]))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&a| a.max(T::zero())).collect(),
        )
        .unwrap();
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = T::from_f64(slope);
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&a| if a > T::zero() { a } else { a * s })
            .collect();
        let out = Tensor::new(v.shape().to_vec(), data).unwrap();
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    /// Fully connected layer: `[N, in] · [out, in]ᵀ + [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(self.mismatch(format!("linear input {xs:?} with weight {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(self.mismatch(format!(
                    "linear bias {:?} for {} outputs",
                    self.shape(b),
                    ws[0]
                )));
            }
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let mut out = Tensor::zeros(vec![n, fout]);
        for (r, orow) in out.data_mut().chunks_mut(fout).enumerate() {
            let xrow = &xv[r * fin..][..fin];
            for (o, v) in orow.iter_mut().enumerate() {
                let mut acc = bv.map_or(T::zero(), |b| b[o]);
                for (&a, &c) in xrow.iter().zip(&wv[o * fin..][..fin]) {
                    acc += a * c;
                }
                *v = acc;
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// Batched matrix product `[B, M, K] × [B, K, N] → [B, M, N]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(self.mismatch(format!("bmm of {sa:?} and {sb:?}")));
        }
        let dims = [sa[0], sa[1], sa[2], sb[2]];
        let mut out = Tensor::zeros(vec![sa[0], sa[1], sb[2]]);
        kernels::bmm_forward(
            self.value(a).data(),
            self.value(b).data(),
            dims,
            out.data_mut(),
        );
        Ok(self.push(out, Op::Bmm { a, b }, &[a, b]))
    }

    /// Swaps the last two axes of a 3-d tensor.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(self.mismatch(format!("transpose expects 3-d input, got {s:?}")));
        }
        let mut out = Tensor::zeros(vec![s[0], s[2], s[1]]);
        kernels::transpose_last2(self.value(x).data(), s[0], s[1], s[2], out.data_mut());
        Ok(self.push(out, Op::Transpose { x }, &[x]))
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(self.mismatch(format!("softmax axis {axis} of {s:?}")));
        }
        let outer = numel(&s[..axis]);
        let len = s[axis];
        let inner = numel(&s[axis + 1..]);
        let mut out = Tensor::zeros(s);
        kernels::softmax_forward(self.value(x).data(), outer, len, inner, out.data_mut());
        Ok(self.push(
            out,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            &[x],
        ))
    }

    fn zip_same(
        &mut self,
        a: NodeId,
        b: NodeId,
        what: &str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let k = T::from_f64(c);
        let v = self.value(x);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&a| a * k).collect(),
        )
        .unwrap();
        self.push(out, Op::Scale { x, c }, &[x])
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let Some(&first) = xs.first() else {
            return Err(self.mismatch("concat of zero tensors"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(self.mismatch(format!("concat axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != base.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != base[i])
            {
                return Err(self.mismatch(format!("concat of {base:?} and {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &x in xs {
                let chunk = self.shape(x)[axis] * inner;
                data.extend_from_slice(&self.value(x).data()[o * chunk..][..chunk]);
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        ))
    }

    /// Mean over all axes after the first two: `[N, C, ...] → [N, C]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() < 3 {
            return Err(self.mismatch(format!("global_avg_pool expects >= 3 axes, got {s:?}")));
        }
        let plane = numel(&s[2..]);
        let inv = T::from_f64(1.0 / plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![s[0], s[1]], data)?;
        Ok(self.push(out, Op::GlobalAvgPool { x }, &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if numel(&shape) != self.value(x).len() {
            return Err(self.mismatch(format!("reshape {:?} to {shape:?}", self.shape(x))));
        }
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    /// Sum of every element, as a 0-d scalar.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::SumAll { x }, &[x])
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every
    /// node that depends on a gradient-requiring leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(gy);
                continue;
            }
            self.backprop_node(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b, geom } => {
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); self.value(*x).len()];
                    kernels::conv3d_backward_input(geom, gy, self.value(*w).data(), &mut gx);
                    add_into(&mut grads[x.0], gx);
                }
                let want_b = b.is_some_and(|b| self.wants(b));
                if self.wants(*w) || want_b {
                    let mut gw = vec![T::zero(); self.value(*w).len()];
                    let mut gb = vec![T::zero(); geom.c_out];
                    kernels::conv3d_backward_weight(
                        geom,
                        gy,
                        self.value(*x).data(),
                        &mut gw,
                        Some(&mut gb),
                    );
                    if self.wants(*w) {
                        add_into(&mut grads[w.0], gw);
                    }
                    if let (Some(b), true) = (b, want_b) {
                        add_into(&mut grads[b.0], gb);
                    }
                }
            }
            Op::Upsample2 { x } => {
                let s = self.shape(*x);
                let mut gx = vec![T::zero(); self.value(*x).len()];
                kernels::upsample2_backward(gy, s[0] * s[1], [s[2], s[3], s[4]], &mut gx);
                add_into(&mut grads[x.0], gx);
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                let gx = xv
                    .iter()
                    .zip(gy)
                    .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
                    .collect();
                add_into(&mut grads[x.0], gx);
            }
            Op::LeakyRelu { x, slope } => {
                let s = T::from_f64(*slope);
                let xv = self.value(*x).data();
                let gx = xv
                    .iter()
                    .zip(gy)
                    .map(|(&a, &g)| if a > T::zero() { g } else { g * s })
                    .collect();
                add_into(&mut grads[x.0], gx);
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, fin) = (xs[0], xs[1]);
                let fout = self.shape(*w)[0];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); n * fin];
                    for r in 0..n {
                        let grow = &gy[r * fout..][..fout];
                        let out = &mut gx[r * fin..][..fin];
                        for (o, &g) in grow.iter().enumerate() {
                            for (a, &c) in out.iter_mut().zip(&wv[o * fin..][..fin]) {
                                *a += g * c;
                            }
                        }
                    }
                    add_into(&mut grads[x.0], gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![T::zero(); fout * fin];
                    for (o, out) in gw.chunks_mut(fin).enumerate() {
                        for r in 0..n {
                            let g = gy[r * fout + o];
                            for (a, &c) in out.iter_mut().zip(&xv[r * fin..][..fin]) {
                                *a += g * c;
                            }
                        }
                    }
                    add_into(&mut grads[w.0], gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let gb = (0..fout)
                            .map(|o| (0..n).map(|r| gy[r * fout + o]).sum())
                            .collect();
                        add_into(&mut grads[b.0], gb);
                    }
                }
            }
            Op::Bmm { a, b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let dims = [sa[0], sa[1], sa[2], sb[2]];
                let mut ga = vec![T::zero(); self.value(*a).len()];
                let mut gb = vec![T::zero(); self.value(*b).len()];
                kernels::bmm_backward(
                    gy,
                    self.value(*a).data(),
                    self.value(*b).data(),
                    dims,
                    &mut ga,
                    &mut gb,
                );
                if self.wants(*a) {
                    add_into(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], gb);
                }
            }
            Op::Transpose { x } => {
                // output is [B, N, M]; transposing it back gives [B, M, N]
                let s = self.shape(*x);
                let mut gx = vec![T::zero(); gy.len()];
                kernels::transpose_last2(gy, s[0], s[2], s[1], &mut gx);
                add_into(&mut grads[x.0], gx);
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let mut gx = vec![T::zero(); gy.len()];
                kernels::softmax_backward(gy, node.value.data(), *outer, *len, *inner, &mut gx);
                add_into(&mut grads[x.0], gx);
            }
            Op::Add { a, b } => {
                for id in [a, b] {
                    if self.wants(*id) {
                        add_into(&mut grads[id.0], gy.to_vec());
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], gy.to_vec());
                }
                if self.wants(*b) {
                    add_scaled_into(&mut grads[b.0], gy, -T::one());
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    add_into(
                        &mut grads[a.0],
                        gy.iter().zip(bv).map(|(&g, &y)| g * y).collect(),
                    );
                }
                if self.wants(*b) {
                    add_into(
                        &mut grads[b.0],
                        gy.iter().zip(av).map(|(&g, &x)| g * x).collect(),
                    );
                }
            }
            Op::Scale { x, c } => add_scaled_into(&mut grads[x.0], gy, T::from_f64(*c)),
            Op::Concat { xs, axis } => {
                let base = self.shape(xs[0]);
                let outer = numel(&base[..*axis]);
                let inner = numel(&base[axis + 1..]);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &x in xs {
                    let chunk = self.shape(x)[*axis] * inner;
                    if self.wants(x) {
                        let mut gx = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            gx.extend_from_slice(&gy[o * total + offset..][..chunk]);
                        }
                        add_into(&mut grads[x.0], gx);
                    }
                    offset += chunk;
                }
            }
            Op::GlobalAvgPool { x } => {
                let plane = numel(&self.shape(*x)[2..]);
                let inv = T::from_f64(1.0 / plane as f64);
                let gx = gy
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g * inv, plane))
                    .collect();
                add_into(&mut grads[x.0], gx);
            }
            Op::Reshape { x } => add_into(&mut grads[x.0], gy.to_vec()),
            Op::SumAll { x } => {
                let n = self.value(*x).len();
                add_into(&mut grads[x.0], vec![gy[0]; n]);
            }
        }
    }
}

#[cfg(test)]
mod tests;

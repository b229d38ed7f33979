//! Reverse-mode differentiation over dense real tensors.
//!
//! A [`Graph`] is an append-only tape: every op pushes a node holding its
//! values and the ids of its inputs. Node ids increase from inputs to
//! outputs, so walking the tape backwards is a topological order and visits
//! each node exactly once. Complex data is carried as paired real channels;
//! only the acquisition module works with native complex scalars.

mod kernels;
mod linear_op;

pub mod gradcheck;

pub use kernels::ConvDims;
pub use linear_op::LinearOperator;

use crate::error::{Error, Result};
use crate::scalar::Real;
use std::sync::Arc;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(pub usize);

enum Op<F: Real> {
    Leaf,
    Detach(#[allow(dead_code)] TensorId),
    Relu(TensorId),
    Ln(TensorId),
    Clamp { x: TensorId, lo: F, hi: F },
    Affine { x: TensorId, mul: F },
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Reshape(TensorId),
    ConcatChannels(Vec<TensorId>),
    SliceChannels { x: TensorId, from: usize, to: usize },
    AvgPool2(TensorId),
    Upsample2(TensorId),
    Conv2d { x: TensorId, w: TensorId, b: TensorId, dims: ConvDims },
    PermutePixels { x: TensorId, perm: Arc<Vec<u32>> },
    ComplexMulChannels { u: TensorId, pd: TensorId },
    MseLoss { a: TensorId, b: TensorId },
    ApplyLinear { x: TensorId, op: Arc<LinearOperator<F>>, batch: usize },
}

struct Node<F: Real> {
    shape: Vec<usize>,
    values: Vec<F>,
    grad: Option<Vec<F>>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<F>, op: Op<F>, needs_grad: bool) -> TensorId {
        debug_assert_eq!(numel(&shape), values.len());
        self.nodes.push(Node { shape, values, grad: None, op, needs_grad });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, shape: Vec<usize>, values: Vec<F>) -> TensorId {
        assert_eq!(numel(&shape), values.len(), "param shape/values");
        self.push(shape, values, Op::Leaf, true)
    }

    /// Leaf that never allocates gradient storage.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<F>) -> TensorId {
        assert_eq!(numel(&shape), values.len(), "constant shape/values");
        self.push(shape, values, Op::Leaf, false)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: TensorId) -> &[F] {
        &self.nodes[id.0].values
    }

    pub fn grad(&self, id: TensorId) -> Option<&[F]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn scalar_value(&self, id: TensorId) -> F {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn dims4(&self, op: &'static str, x: TensorId) -> Result<(usize, usize, usize, usize)> {
        match *self.shape(x) {
            [n, c, h, w] => Ok((n, c, h, w)),
            ref s => Err(Error::shape(op, format!("expected 4-d tensor, got {s:?}"))),
        }
    }

    // ---- elementwise ----

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let vals = self.values(x).iter().map(|&v| v.max(F::zero())).collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), vals, Op::Relu(x), ng)
    }

    /// Natural log; caller must keep inputs positive (see `clamp`).
    pub fn ln(&mut self, x: TensorId) -> TensorId {
        let vals = self.values(x).iter().map(|&v| v.ln()).collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), vals, Op::Ln(x), ng)
    }

    /// Elementwise clamp to [lo, hi]; gradient passes only strictly inside.
    pub fn clamp(&mut self, x: TensorId, lo: F, hi: F) -> TensorId {
        let vals = self
            .values(x)
            .iter()
            .map(|&v| v.max(lo).min(hi))
            .collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), vals, Op::Clamp { x, lo, hi }, ng)
    }

    /// mul * x + add, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: TensorId, mul: F, add: F) -> TensorId {
        let vals = self.values(x).iter().map(|&v| mul * v + add).collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), vals, Op::Affine { x, mul }, ng)
    }

    pub fn scale(&mut self, x: TensorId, s: F) -> TensorId {
        self.affine(x, s, F::zero())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let vals = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&p, &q)| p + q)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), vals, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let vals = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&p, &q)| p - q)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), vals, Op::Sub(a, b), ng))
    }

    pub fn mul_elementwise(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul_elementwise", a, b)?;
        let vals = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&p, &q)| p * q)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), vals, Op::Mul(a, b), ng))
    }

    /// Identity on values; gradients do not propagate past it.
    pub fn detach(&mut self, x: TensorId) -> TensorId {
        let vals = self.values(x).to_vec();
        self.push(self.shape(x).to_vec(), vals, Op::Detach(x), false)
    }

    // ---- shape ----

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        if numel(&shape) != self.values(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(x), shape),
            ));
        }
        let vals = self.values(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(shape, vals, Op::Reshape(x), ng))
    }

    pub fn concat_channels(&mut self, xs: &[TensorId]) -> Result<TensorId> {
        if xs.is_empty() {
            return Err(Error::shape("concat_channels", "no inputs"));
        }
        let (n, _, h, w) = self.dims4("concat_channels", xs[0])?;
        let mut c_total = 0;
        for &x in xs {
            let (ni, ci, hi, wi) = self.dims4("concat_channels", x)?;
            if (ni, hi, wi) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} vs {:?}", self.shape(xs[0]), self.shape(x)),
                ));
            }
            c_total += ci;
        }
        let hw = h * w;
        let mut vals = vec![F::zero(); n * c_total * hw];
        for s in 0..n {
            let mut c_off = 0;
            for &x in xs {
                let ci = self.shape(x)[1];
                let src = &self.values(x)[s * ci * hw..(s + 1) * ci * hw];
                vals[(s * c_total + c_off) * hw..(s * c_total + c_off + ci) * hw]
                    .copy_from_slice(src);
                c_off += ci;
            }
        }
        let ng = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(vec![n, c_total, h, w], vals, Op::ConcatChannels(xs.to_vec()), ng))
    }

    pub fn slice_channels(&mut self, x: TensorId, from: usize, to: usize) -> Result<TensorId> {
        let (n, c, h, w) = self.dims4("slice_channels", x)?;
        if from >= to || to > c {
            return Err(Error::shape(
                "slice_channels",
                format!("range {from}..{to} of {c} channels"),
            ));
        }
        let hw = h * w;
        let ci = to - from;
        let mut vals = vec![F::zero(); n * ci * hw];
        for s in 0..n {
            vals[s * ci * hw..(s + 1) * ci * hw].copy_from_slice(
                &self.values(x)[(s * c + from) * hw..(s * c + to) * hw],
            );
        }
        let ng = self.needs(x);
        Ok(self.push(vec![n, ci, h, w], vals, Op::SliceChannels { x, from, to }, ng))
    }

    // ---- spatial ----

    pub fn avgpool2(&mut self, x: TensorId) -> Result<TensorId> {
        let (n, c, h, w) = self.dims4("avgpool2", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avgpool2", format!("odd spatial dims {h}x{w}")));
        }
        let vals = kernels::avgpool2_forward(self.values(x), n, c, h, w);
        let ng = self.needs(x);
        Ok(self.push(vec![n, c, h / 2, w / 2], vals, Op::AvgPool2(x), ng))
    }

    pub fn upsample2_nearest(&mut self, x: TensorId) -> Result<TensorId> {
        let (n, c, h, w) = self.dims4("upsample2_nearest", x)?;
        let vals = kernels::upsample2_forward(self.values(x), n, c, h, w);
        let ng = self.needs(x);
        Ok(self.push(vec![n, c, 2 * h, 2 * w], vals, Op::Upsample2(x), ng))
    }

    /// Same-padding stride-1 cross-correlation with odd square kernels.
    pub fn conv2d(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (n, cin, h, wd) = self.dims4("conv2d", x)?;
        let (cout, cin_w, kh, kw) = self.dims4("conv2d", w)?;
        if cin_w != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {cin} vs kernel channels {cin_w}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel must be odd square, got {kh}x{kw}")));
        }
        match *self.shape(b) {
            [c] if c == cout => {}
            ref s => {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias shape {s:?} vs output channels {cout}"),
                ))
            }
        }
        let dims = ConvDims { n, cin, h, w: wd, cout, k: kh };
        let vals = kernels::conv2d_forward(self.values(x), self.values(w), self.values(b), &dims);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![n, cout, h, wd], vals, Op::Conv2d { x, w, b, dims }, ng))
    }

    /// Channel-wise pixel permutation: out[.., i] = x[.., perm[i]].
    pub fn permute_pixels(&mut self, x: TensorId, perm: Arc<Vec<u32>>) -> Result<TensorId> {
        let (n, c, h, w) = self.dims4("permute_pixels", x)?;
        let hw = h * w;
        if perm.len() != hw {
            return Err(Error::shape(
                "permute_pixels",
                format!("perm length {} vs {h}x{w}", perm.len()),
            ));
        }
        let src = self.values(x);
        let mut vals = vec![F::zero(); src.len()];
        for img in 0..n * c {
            let s = &src[img * hw..(img + 1) * hw];
            let d = &mut vals[img * hw..(img + 1) * hw];
            for (i, &p) in perm.iter().enumerate() {
                d[i] = s[p as usize];
            }
        }
        let ng = self.needs(x);
        Ok(self.push(vec![n, c, h, w], vals, Op::PermutePixels { x, perm }, ng))
    }

    /// Complex scaling of t stacked complex channels by one complex channel:
    /// u is [n, 2t, h, w] (re halves then im halves), pd is [n, 2, h, w].
    pub fn complex_mul_channels(&mut self, u: TensorId, pd: TensorId) -> Result<TensorId> {
        let (n, c2t, h, w) = self.dims4("complex_mul_channels", u)?;
        let (np, cp, hp, wp) = self.dims4("complex_mul_channels", pd)?;
        if c2t % 2 != 0 {
            return Err(Error::shape("complex_mul_channels", format!("odd channel count {c2t}")));
        }
        if (np, cp, hp, wp) != (n, 2, h, w) {
            return Err(Error::shape(
                "complex_mul_channels",
                format!("pd shape {:?}, want [{n}, 2, {h}, {w}]", self.shape(pd)),
            ));
        }
        let t = c2t / 2;
        let hw = h * w;
        let uv = self.values(u);
        let pv = self.values(pd);
        let mut vals = vec![F::zero(); uv.len()];
        for s in 0..n {
            let pr = &pv[s * 2 * hw..s * 2 * hw + hw];
            let pi = &pv[s * 2 * hw + hw..(s + 1) * 2 * hw];
            for j in 0..t {
                let ur = &uv[(s * c2t + j) * hw..(s * c2t + j + 1) * hw];
                let ui = &uv[(s * c2t + t + j) * hw..(s * c2t + t + j + 1) * hw];
                for v in 0..hw {
                    vals[(s * c2t + j) * hw + v] = pr[v] * ur[v] - pi[v] * ui[v];
                    vals[(s * c2t + t + j) * hw + v] = pr[v] * ui[v] + pi[v] * ur[v];
                }
            }
        }
        let ng = self.needs(u) || self.needs(pd);
        Ok(self.push(vec![n, c2t, h, w], vals, Op::ComplexMulChannels { u, pd }, ng))
    }

    // ---- losses and operators ----

    /// Mean of squared differences over all elements.
    pub fn mse_loss(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mse_loss", a, b)?;
        let len = F::of_usize(self.values(a).len());
        let s: F = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![1], vec![s / len], Op::MseLoss { a, b }, ng))
    }

    /// Apply a fixed linear operator. Accepts either `in_shape` exactly or a
    /// leading batch dimension prepended to it.
    pub fn apply_linear(&mut self, op: Arc<LinearOperator<F>>, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x);
        let (batch, out_shape) = if xs == op.in_shape.as_slice() {
            (0usize, op.out_shape.clone())
        } else if xs.len() == op.in_shape.len() + 1 && xs[1..] == op.in_shape[..] {
            let mut os = vec![xs[0]];
            os.extend_from_slice(&op.out_shape);
            (xs[0], os)
        } else {
            return Err(Error::shape(
                "apply_linear",
                format!("input {:?} vs operator input {:?}", xs, op.in_shape),
            ));
        };
        let in_len = op.in_len();
        let out_len = op.out_len();
        let vals = if batch == 0 {
            op.forward(self.values(x))
        } else {
            let xv = self.values(x);
            let per = crate::util::par_map(batch, |s| op.forward(&xv[s * in_len..(s + 1) * in_len]));
            let mut vals = vec![F::zero(); batch * out_len];
            for (s, v) in per.into_iter().enumerate() {
                vals[s * out_len..(s + 1) * out_len].copy_from_slice(&v);
            }
            vals
        };
        let ng = self.needs(x);
        Ok(self.push(out_shape, vals, Op::ApplyLinear { x, op, batch }, ng))
    }

    // ---- backward ----

    fn add_grad(&mut self, id: TensorId, contrib: &[F]) {
        let node = &mut self.nodes[id.0];
        if !node.needs_grad {
            return;
        }
        debug_assert_eq!(node.values.len(), contrib.len());
        match node.grad {
            Some(ref mut g) => {
                for (a, b) in g.iter_mut().zip(contrib) {
                    *a += *b;
                }
            }
            None => node.grad = Some(contrib.to_vec()),
        }
    }

    /// Reverse-mode pass from a scalar loss. Gradients of interior nodes are
    /// consumed as the walk passes them; leaf gradients remain readable.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.values(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let g = if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            } else {
                self.nodes[idx].grad.take().expect("grad present")
            };
            self.backprop_node(idx, &g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, g: &[F]) {
        // Compute parent contributions first (immutable borrows), then
        // accumulate (mutable borrows).
        enum Contribs<F> {
            One(TensorId, Vec<F>),
            Two(TensorId, Vec<F>, TensorId, Vec<F>),
            Three(TensorId, Vec<F>, TensorId, Vec<F>, TensorId, Vec<F>),
            Many(Vec<(TensorId, Vec<F>)>),
            None,
        }

        let contribs: Contribs<F> = match self.nodes[idx].op {
            Op::Leaf | Op::Detach(_) => Contribs::None,
            Op::Relu(x) => {
                let xv = self.values(x);
                let c = xv
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > F::zero() { gi } else { F::zero() })
                    .collect();
                Contribs::One(x, c)
            }
            Op::Ln(x) => {
                let xv = self.values(x);
                let c = xv.iter().zip(g).map(|(&v, &gi)| gi / v).collect();
                Contribs::One(x, c)
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.values(x);
                let c = xv
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v >= lo && v <= hi { gi } else { F::zero() })
                    .collect();
                Contribs::One(x, c)
            }
            Op::Affine { x, mul } => {
                let c = g.iter().map(|&gi| mul * gi).collect();
                Contribs::One(x, c)
            }
            Op::Add(a, b) => Contribs::Two(a, g.to_vec(), b, g.to_vec()),
            Op::Sub(a, b) => {
                let nb = g.iter().map(|&gi| -gi).collect();
                Contribs::Two(a, g.to_vec(), b, nb)
            }
            Op::Mul(a, b) => {
                let av = self.values(a);
                let bv = self.values(b);
                let ca = bv.iter().zip(g).map(|(&v, &gi)| v * gi).collect();
                let cb = av.iter().zip(g).map(|(&v, &gi)| v * gi).collect();
                Contribs::Two(a, ca, b, cb)
            }
            Op::Reshape(x) => Contribs::One(x, g.to_vec()),
            Op::ConcatChannels(ref xs) => {
                let xs = xs.clone();
                let [n, _, h, w] = *self.nodes[idx].shape.as_slice() else { unreachable!() };
                let c_total = self.nodes[idx].shape[1];
                let hw = h * w;
                let mut out = Vec::with_capacity(xs.len());
                let mut c_off = 0;
                for &x in &xs {
                    let ci = self.shape(x)[1];
                    let mut cx = vec![F::zero(); n * ci * hw];
                    for s in 0..n {
                        cx[s * ci * hw..(s + 1) * ci * hw].copy_from_slice(
                            &g[(s * c_total + c_off) * hw..(s * c_total + c_off + ci) * hw],
                        );
                    }
                    out.push((x, cx));
                    c_off += ci;
                }
                Contribs::Many(out)
            }
            Op::SliceChannels { x, from, to } => {
                let [n, c, h, w] = *self.shape(x) else { unreachable!() };
                let hw = h * w;
                let ci = to - from;
                let mut cx = vec![F::zero(); n * c * hw];
                for s in 0..n {
                    cx[(s * c + from) * hw..(s * c + to) * hw]
                        .copy_from_slice(&g[s * ci * hw..(s + 1) * ci * hw]);
                }
                Contribs::One(x, cx)
            }
            Op::AvgPool2(x) => {
                let [n, c, h, w] = *self.shape(x) else { unreachable!() };
                Contribs::One(x, kernels::avgpool2_backward(g, n, c, h, w))
            }
            Op::Upsample2(x) => {
                let [n, c, h, w] = *self.shape(x) else { unreachable!() };
                Contribs::One(x, kernels::upsample2_backward(g, n, c, h, w))
            }
            Op::Conv2d { x, w, b, ref dims } => {
                let dims = *dims;
                let (gx, gw, gb) =
                    kernels::conv2d_backward(self.values(x), self.values(w), g, &dims);
                Contribs::Three(x, gx, w, gw, b, gb)
            }
            Op::PermutePixels { x, ref perm } => {
                let perm = perm.clone();
                let [n, c, h, w] = *self.shape(x) else { unreachable!() };
                let hw = h * w;
                let mut cx = vec![F::zero(); n * c * hw];
                for img in 0..n * c {
                    let gs = &g[img * hw..(img + 1) * hw];
                    let d = &mut cx[img * hw..(img + 1) * hw];
                    for (i, &p) in perm.iter().enumerate() {
                        d[p as usize] += gs[i];
                    }
                }
                Contribs::One(x, cx)
            }
            Op::ComplexMulChannels { u, pd } => {
                let [n, c2t, h, w] = *self.shape(u) else { unreachable!() };
                let t = c2t / 2;
                let hw = h * w;
                let uv = self.values(u);
                let pv = self.values(pd);
                let mut gu = vec![F::zero(); uv.len()];
                let mut gp = vec![F::zero(); pv.len()];
                for s in 0..n {
                    let pr = &pv[s * 2 * hw..s * 2 * hw + hw];
                    let pi = &pv[s * 2 * hw + hw..(s + 1) * 2 * hw];
                    for j in 0..t {
                        let o_re = (s * c2t + j) * hw;
                        let o_im = (s * c2t + t + j) * hw;
                        for v in 0..hw {
                            let gre = g[o_re + v];
                            let gim = g[o_im + v];
                            let ur = uv[o_re + v];
                            let ui = uv[o_im + v];
                            gu[o_re + v] = gre * pr[v] + gim * pi[v];
                            gu[o_im + v] = -gre * pi[v] + gim * pr[v];
                            gp[s * 2 * hw + v] += gre * ur + gim * ui;
                            gp[s * 2 * hw + hw + v] += -gre * ui + gim * ur;
                        }
                    }
                }
                Contribs::Two(u, gu, pd, gp)
            }
            Op::MseLoss { a, b } => {
                let av = self.values(a);
                let bv = self.values(b);
                let scale = g[0] * F::of_f64(2.0) / F::of_usize(av.len());
                let ca: Vec<F> = av
                    .iter()
                    .zip(bv)
                    .map(|(&p, &q)| scale * (p - q))
                    .collect();
                let cb: Vec<F> = ca.iter().map(|&v| -v).collect();
                Contribs::Two(a, ca, b, cb)
            }
            Op::ApplyLinear { x, ref op, batch } => {
                let op = op.clone();
                let c = if batch == 0 {
                    op.adjoint(g)
                } else {
                    let out_len = op.out_len();
                    let in_len = op.in_len();
                    let per =
                        crate::util::par_map(batch, |s| op.adjoint(&g[s * out_len..(s + 1) * out_len]));
                    let mut c = vec![F::zero(); batch * in_len];
                    for (s, v) in per.into_iter().enumerate() {
                        c[s * in_len..(s + 1) * in_len].copy_from_slice(&v);
                    }
                    c
                };
                Contribs::One(x, c)
            }
        };

        match contribs {
            Contribs::None => {}
            Contribs::One(a, ca) => self.add_grad(a, &ca),
            Contribs::Two(a, ca, b, cb) => {
                self.add_grad(a, &ca);
                self.add_grad(b, &cb);
            }
            Contribs::Three(a, ca, b, cb, c, cc) => {
                self.add_grad(a, &ca);
                self.add_grad(b, &cb);
                self.add_grad(c, &cc);
            }
            Contribs::Many(list) => {
                for (a, ca) in list {
                    self.add_grad(a, &ca);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> Graph<f64> {
        Graph::new()
    }

    #[test]
    fn relu_values() {
        let mut g = graph();
        let x = g.param(vec![2], vec![-1.0, 2.0]);
        let y = g.relu(x);
        assert_eq!(g.values(y), &[0.0, 2.0]);
    }

    #[test]
    fn upsample_of_avgpool_is_identity_on_constants() {
        let mut g = graph();
        let x = g.param(vec![1, 1, 4, 4], vec![0.7; 16]);
        let p = g.avgpool2(x).unwrap();
        let u = g.upsample2_nearest(p).unwrap();
        assert_eq!(g.values(u), g.values(x));
    }

    #[test]
    fn mse_basics() {
        let mut g = graph();
        let x = g.param(vec![2], vec![0.0, 0.0]);
        let y = g.constant(vec![2], vec![2.0, 0.0]);
        let l = g.mse_loss(x, y).unwrap();
        assert_eq!(g.scalar_value(l), 2.0);
        let l2 = g.mse_loss(x, x).unwrap();
        assert_eq!(g.scalar_value(l2), 0.0);
    }

    #[test]
    fn scalar_kernel_conv_scales() {
        let mut g = graph();
        let x = g.param(vec![1, 1, 3, 3], vec![1.0; 9]);
        let w = g.param(vec![1, 1, 1, 1], vec![2.0]);
        let b = g.param(vec![1], vec![0.0]);
        let y = g.conv2d(x, w, b).unwrap();
        assert!(g.values(y).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn identity_kernel_conv() {
        let mut g = graph();
        let vals: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let x = g.param(vec![1, 1, 3, 3], vals.clone());
        let w = g.param(vec![1, 1, 1, 1], vec![1.0]);
        let b = g.param(vec![1], vec![0.0]);
        let y = g.conv2d(x, w, b).unwrap();
        assert_eq!(g.values(y), vals.as_slice());
    }

    #[test]
    fn shape_mismatch_is_structured() {
        let mut g = graph();
        let a = g.param(vec![2], vec![1.0, 2.0]);
        let b = g.param(vec![3], vec![1.0, 2.0, 3.0]);
        match g.add(a, b) {
            Err(Error::ShapeMismatch { op, detail }) => {
                assert_eq!(op, "add");
                assert!(detail.contains('2') && detail.contains('3'));
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn constant_never_allocates_grad() {
        let mut g = graph();
        let x = g.param(vec![2], vec![1.0, 2.0]);
        let c = g.constant(vec![2], vec![3.0, 4.0]);
        let y = g.mul_elementwise(x, c).unwrap();
        let t = g.constant(vec![2], vec![0.0, 0.0]);
        let l = g.mse_loss(y, t).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).is_some());
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn fanout_accumulates() {
        // loss = mean((x + x)^2) -> dloss/dx = 8x/len... with len 1: d((2x)^2) = 8x
        let mut g = graph();
        let x = g.param(vec![1], vec![3.0]);
        let y = g.add(x, x).unwrap();
        let z = g.constant(vec![1], vec![0.0]);
        let l = g.mse_loss(y, z).unwrap();
        g.backward(l).unwrap();
        assert!((g.grad(x).unwrap()[0] - 24.0).abs() < 1e-12);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = graph();
        let x = g.param(vec![1], vec![3.0]);
        let d = g.detach(x);
        let t = g.constant(vec![1], vec![0.0]);
        let l = g.mse_loss(d, t).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn apply_linear_identity_and_zero() {
        let mut g = graph();
        let x = g.param(vec![4], vec![1.0, -2.0, 3.0, -4.0]);
        let ident = Arc::new(LinearOperator::identity(vec![4]));
        let y = g.apply_linear(ident, x).unwrap();
        assert_eq!(g.values(y), g.values(x));
        let zero = Arc::new(LinearOperator::new(
            vec![4],
            vec![4],
            |v: &[f64]| vec![0.0; v.len()],
            |v: &[f64]| vec![0.0; v.len()],
        ));
        let z = g.apply_linear(zero, x).unwrap();
        assert!(g.values(z).iter().all(|&v| v == 0.0));
        let t = g.constant(vec![4], vec![0.0; 4]);
        let l = g.mse_loss(z, t).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 0.0));
    }
}

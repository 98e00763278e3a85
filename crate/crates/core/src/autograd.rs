//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! into every node that (transitively) depends on a differentiable leaf.
//! Nodes built only from constants are never visited.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_nt, gemm_tn, mat_dims, numel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Expand { x: Var, axis: usize },
    SumAxis { x: Var, axis: usize },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    MatMul(Var, Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Elu(Var),
    Gelu(Var),
    Relu(Var),
    Powf(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    DepthwiseConv { x: Var, w: Var, pad_left: usize },
    NeighborMix { x: Var, w: Var },
    AdaptivePool { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
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

    /// Differentiable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.input(store.value(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Parameters bound into this graph, in binding order of their ids.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        let mut out: Vec<_> = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        out.sort_by_key(|(k, _)| *k);
        out
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Argument(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let value = self.value(a).zip_map(self.value(b), f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
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

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { x.exp_m1() }, Op::Elu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
            Op::Gelu(a),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, |x| x.powf(p), Op::Powf(a, p))
    }

    pub fn expand(&mut self, a: Var, axis: usize, n: usize) -> Result<Var> {
        if self.shape(a).get(axis) != Some(&1) {
            return Err(Error::Argument(format!(
                "expand: axis {axis} of {:?} is not singleton",
                self.shape(a)
            )));
        }
        let value = self.value(a).expand_axis(axis, n);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Expand { x: a, axis }, rg))
    }

    /// Broadcast singleton axes of `a` up to `shape` (same rank).
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        if src.len() != shape.len() {
            return Err(Error::Argument(format!("broadcast {src:?} -> {shape:?}: rank differs")));
        }
        let mut cur = a;
        for (axis, (&s, &t)) in src.iter().zip(shape).enumerate() {
            if s != t {
                if s != 1 {
                    return Err(Error::Argument(format!("broadcast {src:?} -> {shape:?}")));
                }
                cur = self.expand(cur, axis, t)?;
            }
        }
        Ok(cur)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let value = self.value(a).sum_axis(axis);
        let rg = self.rg(a);
        self.push(value, Op::SumAxis { x: a, axis }, rg)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let n = self.shape(a)[axis] as f64;
        let s = self.sum_axis(a, axis);
        self.scale(s, 1.0 / n)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[n])?;
        Ok(self.sum_axis(flat, 0))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a)?;
        Ok(self.scale(s, 1.0 / n))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let value = self.value(a).permute(perm);
        let rg = self.rg(a);
        self.push(
            value,
            Op::Permute {
                x: a,
                perm: perm.to_vec(),
            },
            rg,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_last(self.value(a), false);
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = softmax_last(self.value(a), true);
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        for &p in &parts[1..] {
            let s = self.shape(p);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Argument(format!("concat: {first:?} vs {s:?} along {axis}")));
            }
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat(&tensors, axis);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        if start + len > self.shape(a)[axis] {
            return Err(Error::Argument(format!(
                "slice [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                self.shape(a)
            )));
        }
        let value = self.value(a).slice_axis(axis, start, len);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Slice { x: a, axis, start }, rg))
    }

    /// Per-channel convolution along the last axis of `x: [B, C, L]` with
    /// kernels `w: [C, K]`, zero padding, output length `L + pad_left + pad_right - K + 1`.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, pad_left: usize, pad_right: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 2 || ws[0] != xs[1] {
            return Err(Error::Argument(format!("depthwise_conv1d: x {xs:?}, w {ws:?}")));
        }
        let (b, c, l, k) = (xs[0], xs[1], xs[2], ws[1]);
        if l + pad_left + pad_right < k {
            return Err(Error::Argument(format!("depthwise_conv1d: kernel {k} longer than padded input")));
        }
        let lout = l + pad_left + pad_right + 1 - k;
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; b * c * lout];
        for bi in 0..b {
            for ci in 0..c {
                let xr = &xv[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                let wr = &wv[ci * k..(ci + 1) * k];
                let or = &mut out[(bi * c + ci) * lout..(bi * c + ci + 1) * lout];
                for (t, o) in or.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, &wj) in wr.iter().enumerate() {
                        let src = t + j;
                        if src >= pad_left && src - pad_left < l {
                            acc += wj * xr[src - pad_left];
                        }
                    }
                    *o = acc;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(
            Tensor::from_parts(vec![b, c, lout], out),
            Op::DepthwiseConv { x, w, pad_left },
            rg,
        ))
    }

    /// Locally connected mixing across the channel axis of `x: [B, C, L]`:
    /// `out[b, c, t] = sum_j w[c, j] * x[b, c + j - (K-1)/2, t]`, zero padded.
    pub fn neighbor_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 2 || ws[0] != xs[1] {
            return Err(Error::Argument(format!("neighbor_mix: x {xs:?}, w {ws:?}")));
        }
        let (b, c, l, k) = (xs[0], xs[1], xs[2], ws[1]);
        let half = (k - 1) / 2;
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; b * c * l];
        for bi in 0..b {
            for ci in 0..c {
                let or = &mut out[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                for j in 0..k {
                    let src = ci + j;
                    if src < half || src - half >= c {
                        continue;
                    }
                    let wj = wv[ci * k + j];
                    let xr = &xv[(bi * c + src - half) * l..(bi * c + src - half + 1) * l];
                    for (o, xv) in or.iter_mut().zip(xr) {
                        *o += wj * xv;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::from_parts(xs, out), Op::NeighborMix { x, w }, rg))
    }

    /// Adaptive average pooling of the last axis to `out_len` bins.
    pub fn adaptive_avg_pool(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let l = *xs.last().ok_or_else(|| Error::Argument("adaptive_avg_pool on scalar".into()))?;
        if out_len == 0 || l == 0 {
            return Err(Error::Argument("adaptive_avg_pool: empty axis".into()));
        }
        let rows = numel(&xs) / l;
        let xv = self.value(x).data();
        let mut out = vec![0.0; rows * out_len];
        for r in 0..rows {
            let xr = &xv[r * l..(r + 1) * l];
            for (i, o) in out[r * out_len..(r + 1) * out_len].iter_mut().enumerate() {
                let (s, e) = pool_bin(i, l, out_len);
                *o = xr[s..e].iter().sum::<f64>() / (e - s) as f64;
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = out_len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AdaptivePool { x }, rg))
    }

    // ---- composites ----------------------------------------------------

    /// `a + b`, broadcasting `b`'s singleton axes.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let bb = self.broadcast_to(b, &shape)?;
        self.add(a, bb)
    }

    pub fn sub_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let bb = self.broadcast_to(b, &shape)?;
        self.sub(a, bb)
    }

    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let bb = self.broadcast_to(b, &shape)?;
        self.mul(a, bb)
    }

    pub fn div_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let bb = self.broadcast_to(b, &shape)?;
        self.div(a, bb)
    }

    /// `x · w + b` over the last axis of `x`; `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(Error::Argument(format!("linear: x {xs:?}, w {ws:?}")));
        }
        // fold leading axes so the weight is shared as a rank-2 operand
        let rows = numel(&xs) / ws[0];
        let flat = self.reshape(x, &[rows, ws[0]])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            let b2 = self.reshape(b, &[1, ws[1]])?;
            y = self.add_bcast(y, b2)?;
        }
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = ws[1];
        self.reshape(y, &out_shape)
    }

    /// Normalize over the last axis, then scale and shift by `gamma`, `beta` (`[F]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = shape.len() - 1;
        let mu = self.mean_axis(x, last);
        let xc = self.sub_bcast(x, mu)?;
        let sq = self.mul(xc, xc)?;
        let var = self.mean_axis(sq, last);
        let ve = self.add_scalar(var, eps);
        let inv = self.powf(ve, -0.5);
        let xn = self.mul_bcast(xc, inv)?;
        let mut ps = vec![1; shape.len()];
        ps[last] = shape[last];
        let g = self.reshape(gamma, &ps)?;
        let b = self.reshape(beta, &ps)?;
        let y = self.mul_bcast(xn, g)?;
        self.add_bcast(y, b)
    }

    /// Divide each row (last axis) by its L2 norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let last = self.shape(x).len() - 1;
        let sq = self.mul(x, x)?;
        let ss = self.sum_axis(sq, last);
        let inv = self.powf(ss, -0.5);
        self.mul_bcast(x, inv)
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a single-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(out)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(self.shape(out), 1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(bv, |x, y| x * y));
                acc(*b, g.zip_map(av, |x, y| x * y));
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(*a, g.zip_map(bv, |x, y| x / y));
                // d(a/b)/db = -y / b
                let t = g.zip_map(y, |gg, yy| gg * yy).zip_map(bv, |x, bb| -x / bb);
                acc(*b, t);
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Expand { x, axis } => acc(*x, g.sum_axis(*axis)),
            Op::SumAxis { x, axis } => {
                let n = self.shape(*x)[*axis];
                acc(*x, g.expand_axis(*axis, n));
            }
            Op::Reshape(x) => {
                let s = self.shape(*x).to_vec();
                acc(*x, g.clone().reshape(&s).expect("reshape grad"));
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                acc(*x, g.permute(&inv));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k) = mat_dims(av.shape()).unwrap();
                let (_, _, n) = mat_dims(bv.shape()).unwrap();
                let shared = bv.rank() == 2;
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; av.len()];
                    for bi in 0..batch {
                        let bm = if shared { bv.data() } else { &bv.data()[bi * k * n..(bi + 1) * k * n] };
                        gemm_nt(&g.data()[bi * m * n..(bi + 1) * m * n], bm, &mut da[bi * m * k..(bi + 1) * m * k], m, k, n);
                    }
                    acc(*a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; bv.len()];
                    for bi in 0..batch {
                        let am = &av.data()[bi * m * k..(bi + 1) * m * k];
                        let gm = &g.data()[bi * m * n..(bi + 1) * m * n];
                        let dst = if shared { &mut db[..] } else { &mut db[bi * k * n..(bi + 1) * k * n] };
                        gemm_tn(am, gm, dst, m, k, n);
                    }
                    acc(*b, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::Exp(a) => acc(*a, g.zip_map(y, |gg, yy| gg * yy)),
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |gg, x| gg / x)),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gg, s| gg * s * (1.0 - s))),
            Op::Elu(a) => {
                let x = self.value(*a);
                let d = x.zip_map(y, |xv, yv| if xv > 0.0 { 1.0 } else { yv + 1.0 });
                acc(*a, g.zip_map(&d, |gg, dd| gg * dd));
            }
            Op::Gelu(a) => {
                let d = self.value(*a).map(|x| {
                    let u = GELU_C * (x + 0.044715 * x * x * x);
                    let t = u.tanh();
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
                });
                acc(*a, g.zip_map(&d, |gg, dd| gg * dd));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gg, xv| if xv > 0.0 { gg } else { 0.0 }));
            }
            Op::Powf(a, p) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gg, xv| gg * p * xv.powf(p - 1.0)));
            }
            Op::Softmax(a) => {
                let l = *y.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for r in 0..y.len() / l {
                    let ys = &y.data()[r * l..(r + 1) * l];
                    let gs = &g.data()[r * l..(r + 1) * l];
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for j in 0..l {
                        d[r * l + j] = ys[j] * (gs[j] - dot);
                    }
                }
                acc(*a, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::LogSoftmax(a) => {
                let l = *y.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for r in 0..y.len() / l {
                    let ys = &y.data()[r * l..(r + 1) * l];
                    let gs = &g.data()[r * l..(r + 1) * l];
                    let gsum: f64 = gs.iter().sum();
                    for j in 0..l {
                        d[r * l + j] = gs[j] - ys[j].exp() * gsum;
                    }
                }
                acc(*a, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let n = self.shape(p)[*axis];
                    acc(p, g.slice_axis(*axis, start, n));
                    start += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, n, inner) = Tensor::axis_split(xs, *axis);
                let len = g.shape()[*axis];
                let mut d = vec![0.0; numel(xs)];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, Tensor::from_parts(xs.to_vec(), d));
            }
            Op::DepthwiseConv { x, w, pad_left } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (b, c, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let k = wv.shape()[1];
                let lout = g.shape()[2];
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let row = bi * c + ci;
                        let xr = &xv.data()[row * l..(row + 1) * l];
                        let gr = &g.data()[row * lout..(row + 1) * lout];
                        for (t, &gt) in gr.iter().enumerate() {
                            if gt == 0.0 {
                                continue;
                            }
                            for j in 0..k {
                                let src = t + j;
                                if src >= *pad_left && src - pad_left < l {
                                    let s = src - pad_left;
                                    dx[row * l + s] += gt * wv.data()[ci * k + j];
                                    dw[ci * k + j] += gt * xr[s];
                                }
                            }
                        }
                    }
                }
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                acc(*w, Tensor::from_parts(wv.shape().to_vec(), dw));
            }
            Op::NeighborMix { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (b, c, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let k = wv.shape()[1];
                let half = (k - 1) / 2;
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let gr = &g.data()[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                        for j in 0..k {
                            let src = ci + j;
                            if src < half || src - half >= c {
                                continue;
                            }
                            let srow = bi * c + src - half;
                            let wj = wv.data()[ci * k + j];
                            let xr = &xv.data()[srow * l..(srow + 1) * l];
                            let mut dwj = 0.0;
                            for t in 0..l {
                                dx[srow * l + t] += gr[t] * wj;
                                dwj += gr[t] * xr[t];
                            }
                            dw[ci * k + j] += dwj;
                        }
                    }
                }
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                acc(*w, Tensor::from_parts(wv.shape().to_vec(), dw));
            }
            Op::AdaptivePool { x } => {
                let xs = self.shape(*x);
                let l = *xs.last().unwrap();
                let p = *g.shape().last().unwrap();
                let rows = numel(xs) / l;
                let mut d = vec![0.0; numel(xs)];
                for r in 0..rows {
                    for i in 0..p {
                        let (s, e) = pool_bin(i, l, p);
                        let share = g.data()[r * p + i] / (e - s) as f64;
                        for v in &mut d[r * l + s..r * l + e] {
                            *v += share;
                        }
                    }
                }
                acc(*x, Tensor::from_parts(xs.to_vec(), d));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bin `i` of `out_len` adaptive-pooling bins over a length-`len` axis.
pub(crate) fn pool_bin(i: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = i * len / out_len;
    let e = ((i + 1) * len).div_ceil(out_len);
    (s, e.max(s + 1))
}

pub(crate) fn softmax_last(t: &Tensor, log: bool) -> Tensor {
    let l = *t.shape().last().unwrap();
    let mut out = vec![0.0; t.len()];
    for r in 0..t.len() / l {
        let xs = &t.data()[r * l..(r + 1) * l];
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = xs.iter().map(|v| (v - m).exp()).sum();
        let lz = z.ln();
        for j in 0..l {
            out[r * l + j] = if log { xs[j] - m - lz } else { (xs[j] - m).exp() / z };
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradient, GradCheck};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Check d(sum(w ⊙ f(x)))/dx for a unary graph builder against central differences.
    fn check_op(shape: &[usize], build: impl Fn(&mut Graph, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = rand_tensor(&mut rng, shape);
        let probe = {
            let mut g = Graph::new();
            let x = g.constant(x0.clone());
            let y = build(&mut g, x);
            rand_tensor(&mut rng, g.shape(y))
        };
        let f = |x: &Tensor| {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let y = build(&mut g, xv);
            let w = g.constant(probe.clone());
            let p = g.mul(y, w).unwrap();
            let s = g.sum_all(p).unwrap();
            let grad = g.backward(s).unwrap().get_or_zeros(xv, x.shape());
            (g.value(s).data()[0], grad)
        };
        let report = check_gradient(|x| f(x).0, &x0, &f(&x0).1, GradCheck::default());
        assert!(report.passed(1e-6), "{report:?}");
    }

    #[test]
    fn elementwise_ops_backprop() {
        check_op(&[2, 3], |g, x| g.exp(x));
        check_op(&[2, 3], |g, x| g.sigmoid(x));
        check_op(&[2, 3], |g, x| g.elu(x));
        check_op(&[2, 3], |g, x| g.gelu(x));
        check_op(&[2, 3], |g, x| {
            let e = g.exp(x);
            g.log(e)
        });
        check_op(&[2, 3], |g, x| {
            let s = g.add_scalar(x, 3.0);
            g.powf(s, -0.5)
        });
        check_op(&[2, 3], |g, x| {
            let s = g.add_scalar(x, 2.0);
            g.div(x, s).unwrap()
        });
    }

    #[test]
    fn structural_ops_backprop() {
        check_op(&[2, 3, 4], |g, x| g.permute(x, &[1, 2, 0]));
        check_op(&[2, 3, 4], |g, x| g.softmax(x));
        check_op(&[2, 3, 4], |g, x| g.log_softmax(x));
        check_op(&[2, 3, 4], |g, x| g.slice(x, 2, 1, 2).unwrap());
        check_op(&[2, 3, 4], |g, x| {
            let s = g.sum_axis(x, 1);
            g.expand(s, 1, 5).unwrap()
        });
        check_op(&[2, 3, 4], |g, x| {
            let a = g.slice(x, 1, 0, 1).unwrap();
            g.concat(&[x, a], 1).unwrap()
        });
        check_op(&[2, 3, 7], |g, x| g.adaptive_avg_pool(x, 3).unwrap());
        check_op(&[2, 3, 4], |g, x| g.l2_normalize(x).unwrap());
    }

    #[test]
    fn matmul_and_conv_backprop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = rand_tensor(&mut rng, &[4, 5]);
        check_op(&[2, 3, 4], move |g, x| {
            let wv = g.constant(w.clone());
            g.linear(x, wv, None).unwrap()
        });
        let k = rand_tensor(&mut rng, &[3, 4]);
        check_op(&[2, 3, 6], move |g, x| {
            let kv = g.constant(k.clone());
            g.depthwise_conv1d(x, kv, 1, 2).unwrap()
        });
        let m = rand_tensor(&mut rng, &[3, 3]);
        check_op(&[2, 3, 5], move |g, x| {
            let mv = g.constant(m.clone());
            g.neighbor_mix(x, mv).unwrap()
        });
        check_op(&[2, 3, 4], |g, x| {
            let t = g.permute(x, &[0, 2, 1]);
            g.matmul(x, t).unwrap()
        });
    }

    #[test]
    fn weight_gradients_of_conv_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[2, 3, 6]);
        let xc = x.clone();
        check_op(&[3, 5], move |g, w| {
            let xv = g.constant(xc.clone());
            g.depthwise_conv1d(xv, w, 2, 2).unwrap()
        });
        check_op(&[3, 3], move |g, w| {
            let xv = g.constant(x.clone());
            g.neighbor_mix(xv, w).unwrap()
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::full(&[2], 1.0));
        let x = g.input(Tensor::full(&[2], 2.0));
        let y = g.mul(c, x).unwrap();
        let s = g.sum_all(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn adaptive_bins_cover_axis() {
        for len in 1..12 {
            for p in 1..=len {
                let mut covered = vec![false; len];
                for i in 0..p {
                    let (s, e) = pool_bin(i, len, p);
                    assert!(s < e && e <= len);
                    covered[s..e].iter_mut().for_each(|c| *c = true);
                }
                assert!(covered.iter().all(|&c| c));
            }
        }
    }
}

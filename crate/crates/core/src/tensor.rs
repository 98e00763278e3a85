//! Dense row-major `f64` tensors.
//!
//! A deliberately small container: a shape and a flat buffer. Every
//! differentiable computation goes through [`crate::autograd::Graph`]; the
//! helpers here are the raw kernels those ops are built from.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Argument(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Panics on a length mismatch; for internal use where the shape is known.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "shape {shape:?}");
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; numel(shape)])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = numel(shape);
        Self::from_parts(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::Argument(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Value at a multi-index.
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            debug_assert!(i < n);
            acc * n + i
        })
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.shape[self.rank() - 1];
        &self.data[i * d..(i + 1) * d]
    }

    /// Copy of the values rounded through `f32`.
    pub fn to_f32_precision(&self) -> Self {
        self.map(|v| v as f32 as f64)
    }

    // ---- raw kernels --------------------------------------------------

    /// Split `shape` around `axis` into (outer, n, inner).
    pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        (outer, shape[axis], inner)
    }

    /// Sum over `axis`, keeping it with size 1.
    pub fn sum_axis(&self, axis: usize) -> Self {
        let (outer, n, inner) = Self::axis_split(&self.shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        Self::from_parts(shape, out)
    }

    /// Repeat a size-1 `axis` `n` times.
    pub fn expand_axis(&self, axis: usize, n: usize) -> Self {
        debug_assert_eq!(self.shape[axis], 1);
        let (outer, _, inner) = Self::axis_split(&self.shape, axis);
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let src = &self.data[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(src);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = n;
        Self::from_parts(shape, out)
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        let rank = self.rank();
        debug_assert_eq!(perm.len(), rank);
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let mut src_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            src_strides[i] = src_strides[i + 1] * self.shape[i + 1];
        }
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..self.len() {
            out.push(self.data[src]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                src += strides[d];
                if idx[d] < new_shape[d] {
                    break;
                }
                src -= strides[d] * new_shape[d];
                idx[d] = 0;
            }
        }
        Self::from_parts(new_shape, out)
    }

    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Self {
        let (outer, n, inner) = Self::axis_split(&self.shape, axis);
        debug_assert!(start + len <= n);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self::from_parts(shape, out)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Self {
        let first = parts[0].shape();
        let (outer, _, inner) = Self::axis_split(first, axis);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = p.shape[axis];
                out.extend_from_slice(&p.data[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        Self::from_parts(shape, out)
    }

    /// Matrix product over the last two axes. `other` is either rank 2
    /// (shared across the batch) or has the same leading axes as `self`.
    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (batch, m, k) = mat_dims(&self.shape)?;
        let (ob, k2, n) = mat_dims(&other.shape)?;
        if k != k2 || !(other.rank() == 2 || (ob == batch && other.shape[..other.rank() - 2] == self.shape[..self.rank() - 2])) {
            return Err(Error::Argument(format!(
                "matmul shape mismatch {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let shared = other.rank() == 2;
        let mut out = vec![0.0; batch * m * n];
        for b in 0..batch {
            let a = &self.data[b * m * k..(b + 1) * m * k];
            let bm = if shared { &other.data[..] } else { &other.data[b * k * n..(b + 1) * k * n] };
            gemm_nn(a, bm, &mut out[b * m * n..(b + 1) * m * n], m, k, n);
        }
        let mut shape = self.shape[..self.rank() - 2].to_vec();
        shape.extend([m, n]);
        Ok(Self::from_parts(shape, out))
    }
}

pub(crate) fn mat_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Argument(format!("matmul needs rank >= 2, got {shape:?}")));
    }
    let r = shape.len();
    Ok((numel(&shape[..r - 2]), shape[r - 2], shape[r - 1]))
}

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×k] += g[m×n] · b[k×n]ᵀ
pub(crate) fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · g[m×n]
pub(crate) fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_arithmetic() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let p = t.permute(&[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(p.at(&[c, a, b]), t.at(&[a, b, c]));
                }
            }
        }
    }

    #[test]
    fn sum_and_expand_are_adjoint_shapes() {
        let t = Tensor::from_fn(&[2, 3, 2], |i| i as f64);
        let s = t.sum_axis(1);
        assert_eq!(s.shape(), &[2, 1, 2]);
        assert_eq!(s.data(), &[0.0 + 2.0 + 4.0, 1.0 + 3.0 + 5.0, 6.0 + 8.0 + 10.0, 7.0 + 9.0 + 11.0]);
        let e = s.expand_axis(1, 3);
        assert_eq!(e.shape(), &[2, 3, 2]);
        assert_eq!(e.at(&[1, 2, 1]), s.at(&[1, 0, 1]));
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[17.0, 39.0]);
        assert!(a.matmul(&Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let a = Tensor::from_fn(&[2, 2, 3], |i| i as f64);
        let b = Tensor::from_fn(&[2, 1, 3], |i| 100.0 + i as f64);
        let c = Tensor::concat(&[&a, &b], 1);
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(c.slice_axis(1, 0, 2), a);
        assert_eq!(c.slice_axis(1, 2, 1), b);
    }
}

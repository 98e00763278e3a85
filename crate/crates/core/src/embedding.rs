use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A batch of fixed-width feature vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Tensor);

impl Embedding {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 2 || t.shape()[0] == 0 || t.shape()[1] == 0 {
            return Err(Error::Argument(format!(
                "embedding must be a non-empty rank-2 tensor, got {:?}",
                t.shape()
            )));
        }
        if !t.all_finite() {
            return Err(Error::Argument("embedding contains non-finite values".into()));
        }
        Ok(Self(t))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Argument("embedding rows differ in width".into()));
        }
        Self::new(Tensor::new(vec![rows.len(), d], rows.concat())?)
    }

    pub fn rows(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self(Tensor::from_parts(vec![idx.len(), d], data))
    }

    /// Largest deviation of a row norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.rows())
            .map(|i| (self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Copy with every row scaled to unit L2 norm. Zero rows stay zero.
    pub fn normalized(&self) -> Self {
        let d = self.dim();
        let mut data = self.0.data().to_vec();
        for row in data.chunks_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        Self(Tensor::from_parts(vec![self.rows(), d], data))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

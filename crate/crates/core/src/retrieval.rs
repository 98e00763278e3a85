//! Zero-shot classification by embedding retrieval, top-k accuracy, and an
//! optional one-hidden-layer classifier head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::embedding::{dot, Embedding};
use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, Adam, ParamStore};
use crate::tensor::Tensor;

/// Gallery indices per query, best match first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    rows: Vec<Vec<usize>>,
}

impl Ranking {
    pub fn new(rows: Vec<Vec<usize>>) -> Result<Self> {
        let g = rows.first().map_or(0, Vec::len);
        if g == 0 || rows.iter().any(|r| r.len() != g) {
            return Err(Error::Argument("ranking rows must be non-empty and equally long".into()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn gallery_size(&self) -> usize {
        self.rows[0].len()
    }

    pub fn top1(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r[0]).collect()
    }
}

/// Sort gallery indices by descending inner product with `query`; ties go
/// to the lower index.
pub fn rank_gallery(query: &[f64], gallery: &Embedding) -> Vec<usize> {
    let scores: Vec<f64> = (0..gallery.rows()).map(|j| dot(query, gallery.row(j))).collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn zero_shot_classify(queries: &Embedding, gallery: &Embedding) -> Result<Ranking> {
    if queries.dim() != gallery.dim() {
        return Err(Error::Argument(format!(
            "query width {} does not match gallery width {}",
            queries.dim(),
            gallery.dim()
        )));
    }
    if gallery.rows() == 0 || queries.rows() == 0 {
        return Err(Error::Argument("queries and gallery must be non-empty".into()));
    }
    Ranking::new((0..queries.rows()).map(|b| rank_gallery(queries.row(b), gallery)).collect())
}

/// Fraction of rows whose truth index is among the first `k` ranked entries.
pub fn topk_accuracy(ranking: &Ranking, truth: &[usize], k: usize) -> Result<f64> {
    let g = ranking.gallery_size();
    if k == 0 || k > g {
        return Err(Error::Argument(format!("k must lie in 1..={g}, got {k}")));
    }
    if truth.len() != ranking.rows.len() {
        return Err(Error::Argument(format!("{} truth indices for {} rows", truth.len(), ranking.rows.len())));
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= g) {
        return Err(Error::Argument(format!("truth index {bad} outside gallery of {g}")));
    }
    let hits = ranking
        .rows
        .iter()
        .zip(truth)
        .filter(|(row, t)| row[..k].contains(t))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
}

/// Top-1 and top-5 (capped at the gallery size) of `queries` against `gallery`.
pub fn evaluate(queries: &Embedding, gallery: &Embedding, truth: &[usize]) -> Result<Accuracy> {
    let ranking = zero_shot_classify(queries, gallery)?;
    Ok(Accuracy {
        top1: topk_accuracy(&ranking, truth, 1)?,
        top5: topk_accuracy(&ranking, truth, 5.min(gallery.rows()))?,
    })
}

/// `scores = relu(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpHead {
    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[input, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, classes]),
            b2: Tensor::zeros(&[classes]),
        }
    }

    pub fn random(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w1: fan_in_uniform(&mut rng, &[input, hidden], input),
            b1: Tensor::zeros(&[hidden]),
            w2: fan_in_uniform(&mut rng, &[hidden, classes], hidden),
            b2: Tensor::zeros(&[classes]),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.w2.shape()[1]
    }

    fn check(&self) -> Result<()> {
        let (d, h) = (self.w1.shape()[0], self.w1.shape()[1]);
        if self.b1.shape() != [h] || self.w2.shape()[0] != h || self.b2.shape() != [self.classes()] || d == 0 {
            return Err(Error::Argument("inconsistent MLP head parameter shapes".into()));
        }
        Ok(())
    }

    /// Raw class scores `[B, classes]`.
    pub fn forward(&self, x: &Embedding) -> Result<Tensor> {
        self.check()?;
        if x.dim() != self.input_width() {
            return Err(Error::Argument(format!(
                "embedding width {} does not match head input {}",
                x.dim(),
                self.input_width()
            )));
        }
        let mut hidden = x.tensor().matmul(&self.w1)?;
        let h = self.b1.len();
        for (i, v) in hidden.data_mut().iter_mut().enumerate() {
            *v = (*v + self.b1.data()[i % h]).max(0.0);
        }
        let mut out = hidden.matmul(&self.w2)?;
        let n = self.classes();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += self.b2.data()[i % n];
        }
        Ok(out)
    }

    /// Argmax class per row; ties go to the lower index.
    pub fn predict(&self, x: &Embedding) -> Result<Vec<usize>> {
        let scores = self.forward(x)?;
        let n = self.classes();
        Ok(scores
            .data()
            .chunks(n)
            .map(|r| {
                (0..n).fold(0, |best, j| if r[j] > r[best] { j } else { best })
            })
            .collect())
    }

    /// Cross-entropy training with Adam over shuffled mini-batches.
    pub fn fit(&mut self, x: &Embedding, labels: &[usize], epochs: usize, lr: f64, seed: u64) -> Result<f64> {
        self.check()?;
        if labels.len() != x.rows() || labels.iter().any(|&l| l >= self.classes()) {
            return Err(Error::Argument("labels must match rows and lie in 0..classes".into()));
        }
        let mut store = ParamStore::new();
        let ids = [
            store.add("w1", self.w1.clone(), true),
            store.add("b1", self.b1.clone(), true),
            store.add("w2", self.w2.clone(), true),
            store.add("b2", self.b2.clone(), true),
        ];
        let mut adam = Adam::new(lr);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        let n = self.classes();
        let mut last = f64::NAN;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(32) {
                let xb = x.select_rows(chunk);
                let onehot = Tensor::from_fn(&[chunk.len(), n], |i| {
                    if labels[chunk[i / n]] == i % n { 1.0 } else { 0.0 }
                });
                let mut g = Graph::new();
                let xv = g.constant(xb.into_tensor());
                let vars = ids.map(|id| g.param(&store, id));
                let [w1, b1, w2, b2] = vars;
                let h = g.linear(xv, w1, Some(b1))?;
                let h = g.relu(h);
                let s = g.linear(h, w2, Some(b2))?;
                let ls = g.log_softmax(s);
                let t = g.constant(onehot);
                let picked = g.mul(ls, t)?;
                let sum = g.sum_all(picked)?;
                let loss = g.scale(sum, -1.0 / chunk.len() as f64);
                total += g.value(loss).data()[0] * chunk.len() as f64;
                let grads = g.backward(loss)?;
                let updates: Vec<_> = ids
                    .iter()
                    .zip(vars)
                    .map(|(&id, v)| (id, grads.get_or_zeros(v, store.value(id).shape())))
                    .collect();
                adam.step(&mut store, &updates);
            }
            last = total / x.rows() as f64;
        }
        self.w1 = store.value(ids[0]).clone();
        self.b1 = store.value(ids[1]).clone();
        self.w2 = store.value(ids[2]).clone();
        self.b2 = store.value(ids[3]).clone();
        Ok(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[&[f64]]) -> Embedding {
        Embedding::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn query_in_gallery_ranks_first() {
        let g = emb(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let r = zero_shot_classify(&g, &g).unwrap();
        assert_eq!(r.top1(), vec![0, 1, 2]);
        assert_eq!(topk_accuracy(&r, &[0, 1, 2], 1).unwrap(), 1.0);
    }

    #[test]
    fn ties_break_by_index() {
        let g = emb(&[&[0.0, 1.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let r = zero_shot_classify(&emb(&[&[1.0, 0.0]]), &g).unwrap();
        assert_eq!(r.rows()[0], vec![1, 2, 0]);
    }

    #[test]
    fn k_bounds() {
        let g = emb(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = zero_shot_classify(&g, &g).unwrap();
        assert!(topk_accuracy(&r, &[0, 1], 3).is_err());
        assert!(topk_accuracy(&r, &[0, 1], 0).is_err());
        assert_eq!(topk_accuracy(&r, &[1, 0], 2).unwrap(), 1.0);
        assert!(zero_shot_classify(&emb(&[&[1.0, 0.0, 0.0]]), &g).is_err());
    }

    #[test]
    fn zero_head_gives_uniform_scores() {
        let head = MlpHead::zeros(3, 4, 5);
        let s = head.forward(&emb(&[&[0.3, -0.2, 0.9]])).unwrap();
        assert!(s.data().iter().all(|&v| v == s.data()[0]));
    }

    #[test]
    fn identity_head_picks_hot_index() {
        let mut head = MlpHead::zeros(3, 3, 3);
        for i in 0..3 {
            head.w1.data_mut()[i * 3 + i] = 1.0;
            head.w2.data_mut()[i * 3 + i] = 1.0;
        }
        let x = emb(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(head.predict(&x).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn two_class_hand_forward() {
        // h = relu([1, -1]·[[1, 2], [3, -1]] + [0.5, 0]) = relu([-1.5, 3]) = [0, 3]
        // s = [0, 3]·[[1, 0], [0.5, -2]] + [0.1, 0.2] = [1.6, -5.8]
        let head = MlpHead {
            w1: Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, -1.0]).unwrap(),
            b1: Tensor::new(vec![2], vec![0.5, 0.0]).unwrap(),
            w2: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.5, -2.0]).unwrap(),
            b2: Tensor::new(vec![2], vec![0.1, 0.2]).unwrap(),
        };
        let s = head.forward(&emb(&[&[1.0, -1.0]])).unwrap();
        assert!((s.data()[0] - 1.6).abs() < 1e-12 && (s.data()[1] + 5.8).abs() < 1e-12);
        assert!(head.forward(&emb(&[&[1.0, 0.0, 0.0]])).is_err());
    }

    #[test]
    fn fit_separates_easy_classes() {
        let x = emb(&[&[1.0, 0.0], &[0.9, 0.1], &[0.0, 1.0], &[0.1, 0.9]]);
        let labels = [0, 0, 1, 1];
        let mut head = MlpHead::random(2, 8, 2, 3);
        head.fit(&x, &labels, 200, 0.01, 0).unwrap();
        assert_eq!(head.predict(&x).unwrap(), labels.to_vec());
    }
}

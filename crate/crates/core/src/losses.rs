//! Training objective: symmetric contrastive alignment, MSE, and the
//! batch-local category-aware clustering loss.
//!
//! The clustering loss needs no global class table. Groups are the concepts
//! present in the current batch; each group's center is the re-normalized
//! mean of its L2-normalized members, and for a sample `q` in group `j`
//!
//! ```text
//! loss(q) = Σ_{i≠j} max(0, s(q, c_i) − M) − log(s(q, c_j) + ε)
//! s(a, b) = (1 + ⟨a, b⟩) / 2
//! ```
//!
//! averaged over the batch. The affine map keeps `s` in `[0, 1]` so the log
//! is defined for any pair of unit vectors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub margin: f64,
    pub epsilon: f64,
    pub temperature: f64,
    pub learnable_temperature: bool,
    /// Weight of an extra EEG↔text alignment term; 0 disables it.
    pub text_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.1,
            margin: 0.5,
            epsilon: 1e-8,
            temperature: 0.07,
            learnable_temperature: false,
            text_weight: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("text_weight", self.text_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be a finite non-negative number"));
            }
        }
        if !(0.0..=1.0).contains(&self.margin) {
            return Err(Error::config("margin", "must lie in [0, 1]"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be > 0"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be > 0"));
        }
        Ok(())
    }
}

/// Group index per row, numbered by first appearance.
pub fn groups_from_labels<S: AsRef<str>>(labels: &[S]) -> Vec<usize> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = seen.len();
            *seen.entry(l.as_ref()).or_insert(next)
        })
        .collect()
}

/// Number of groups, after checking indices are contiguous from 0.
fn group_count(group_of: &[usize]) -> Result<usize> {
    let j = group_of
        .iter()
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| Error::Argument("clustering needs at least one group (J = 0)".into()))?;
    let mut sizes = vec![0usize; j];
    for &k in group_of {
        sizes[k] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::Argument(format!("group {empty} is empty; indices must be contiguous from 0")));
    }
    Ok(j)
}

fn check_pair(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb || sa.len() != 2 || sa[0] == 0 {
        return Err(Error::Argument(format!("{what}: shapes {sa:?} and {sb:?} must match as K x D, K >= 1")));
    }
    Ok(())
}

fn eye(k: usize) -> Tensor {
    Tensor::from_fn(&[k, k], |i| if i / k == i % k { 1.0 } else { 0.0 })
}

/// Symmetric cross-entropy over the `K x K` similarity matrix; `scale` is a
/// `[1]` node holding `1 / τ`.
pub fn align_graph(g: &mut Graph, image: Var, eeg: Var, scale: Var) -> Result<Var> {
    check_pair(g, image, eeg, "align loss")?;
    let k = g.shape(image)[0];
    let et = g.permute(eeg, &[1, 0]);
    let sims = g.matmul(image, et)?;
    let s = g.reshape(scale, &[1, 1])?;
    let logits = g.mul_bcast(sims, s)?;
    let diag = g.constant(eye(k));
    let ls_rows = g.log_softmax(logits);
    let picked_rows = g.mul(ls_rows, diag)?;
    let i2e = g.sum_all(picked_rows)?;
    let logits_t = g.permute(logits, &[1, 0]);
    let ls_cols = g.log_softmax(logits_t);
    let picked_cols = g.mul(ls_cols, diag)?;
    let e2i = g.sum_all(picked_cols)?;
    let both = g.add(i2e, e2i)?;
    Ok(g.scale(both, -0.5 / k as f64))
}

pub fn mse_graph(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Argument(format!("mse: {:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    g.mean_all(sq)
}

/// Normalized group centers `[J, D]` of the rows of `eeg`.
pub fn centers_graph(g: &mut Graph, eeg: Var, group_of: &[usize]) -> Result<Var> {
    let shape = g.shape(eeg).to_vec();
    if shape.len() != 2 || shape[0] != group_of.len() {
        return Err(Error::Argument(format!(
            "{} group labels for embedding {:?}",
            group_of.len(),
            shape
        )));
    }
    let j = group_count(group_of)?;
    let k = group_of.len();
    let mut sizes = vec![0.0; j];
    group_of.iter().for_each(|&gi| sizes[gi] += 1.0);
    let avg = Tensor::from_fn(&[j, k], |i| {
        let (row, col) = (i / k, i % k);
        if group_of[col] == row { 1.0 / sizes[row] } else { 0.0 }
    });
    let normed = g.l2_normalize(eeg)?;
    let a = g.constant(avg);
    let means = g.matmul(a, normed)?;
    for (gi, row) in g.value(means).data().chunks(shape[1]).enumerate() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-12 {
            return Err(Error::Argument(format!("degenerate center for group {gi}: member mean is zero")));
        }
    }
    g.l2_normalize(means)
}

/// Clustering loss of `eeg` rows against `centers` (`[J, D]` node).
pub fn clustering_graph(g: &mut Graph, eeg: Var, centers: Var, group_of: &[usize], margin: f64, eps: f64) -> Result<Var> {
    let j = group_count(group_of)?;
    let k = group_of.len();
    if g.shape(centers)[0] != j || g.shape(eeg)[0] != k {
        return Err(Error::Argument("clustering: group labels do not match embeddings/centers".into()));
    }
    // Visit groups in first-appearance order so any relabeling of the same
    // partition runs the identical sequence of float operations.
    let mut rank = vec![usize::MAX; j];
    let mut order = Vec::with_capacity(j);
    for &gi in group_of {
        if rank[gi] == usize::MAX {
            rank[gi] = order.len();
            order.push(gi);
        }
    }
    let group_of: Vec<usize> = group_of.iter().map(|&gi| rank[gi]).collect();
    let perm = g.constant(Tensor::from_fn(&[j, j], |i| if order[i / j] == i % j { 1.0 } else { 0.0 }));
    let centers = g.matmul(perm, centers)?;
    let ct = g.permute(centers, &[1, 0]);
    let dots = g.matmul(eeg, ct)?;
    let plus = g.add_scalar(dots, 1.0);
    let sim = g.scale(plus, 0.5);
    let pos = Tensor::from_fn(&[k, j], |i| if group_of[i / j] == i % j { 1.0 } else { 0.0 });
    let neg = pos.map(|v| 1.0 - v);
    let pos = g.constant(pos);
    let neg = g.constant(neg);
    let shifted = g.add_scalar(sim, -margin);
    let hinge = g.relu(shifted);
    let hinge = g.mul(hinge, neg)?;
    let margin_terms = g.sum_axis(hinge, 1);
    let own = g.mul(sim, pos)?;
    let own = g.sum_axis(own, 1);
    let own = g.add_scalar(own, eps);
    let log_own = g.log(own);
    let per_sample = g.sub(margin_terms, log_own)?;
    g.mean_all(per_sample)
}

// ---- value-level API ---------------------------------------------------

fn check_unit_rows(e: &Embedding, what: &str) -> Result<()> {
    let dev = e.max_norm_deviation();
    if dev > 1e-3 {
        return Err(Error::Argument(format!("{what} rows must be L2-normalized (norm off by {dev:.3e})")));
    }
    Ok(())
}

fn check_shapes(a: &Embedding, b: &Embedding, what: &str) -> Result<()> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::Argument(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.tensor().shape(),
            b.tensor().shape()
        )));
    }
    Ok(())
}

pub fn align_loss(image: &Embedding, eeg: &Embedding, temperature: f64) -> Result<f64> {
    Ok(align_loss_with_grad(image, eeg, temperature)?.0)
}

/// Alignment loss and its gradient with respect to the EEG rows.
pub fn align_loss_with_grad(image: &Embedding, eeg: &Embedding, temperature: f64) -> Result<(f64, Tensor)> {
    check_shapes(image, eeg, "align loss")?;
    check_unit_rows(image, "image")?;
    check_unit_rows(eeg, "EEG")?;
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!("temperature must be > 0, got {temperature}")));
    }
    let mut g = Graph::new();
    let i = g.constant(image.tensor().clone());
    let e = g.input(eeg.tensor().clone());
    let s = g.constant(Tensor::scalar(1.0 / temperature));
    let l = align_graph(&mut g, i, e, s)?;
    let grad = g.backward(l)?.get_or_zeros(e, eeg.tensor().shape());
    Ok((g.value(l).data()[0], grad))
}

pub fn mse_loss(a: &Embedding, b: &Embedding) -> Result<f64> {
    Ok(mse_loss_with_grad(a, b)?.0)
}

/// MSE and its gradient with respect to `b`.
pub fn mse_loss_with_grad(a: &Embedding, b: &Embedding) -> Result<(f64, Tensor)> {
    check_shapes(a, b, "mse loss")?;
    let mut g = Graph::new();
    let av = g.constant(a.tensor().clone());
    let bv = g.input(b.tensor().clone());
    let l = mse_graph(&mut g, av, bv)?;
    let grad = g.backward(l)?.get_or_zeros(bv, b.tensor().shape());
    Ok((g.value(l).data()[0], grad))
}

/// Batch-local groups and their unit-norm centers.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGroups {
    pub group_of: Vec<usize>,
    pub centers: Embedding,
}

impl BatchGroups {
    pub fn len(&self) -> usize {
        self.centers.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.group_of.is_empty()
    }
}

pub fn batch_centers(eeg: &Embedding, group_of: &[usize]) -> Result<BatchGroups> {
    let mut g = Graph::new();
    let e = g.constant(eeg.tensor().clone());
    let c = centers_graph(&mut g, e, group_of)?;
    Ok(BatchGroups {
        group_of: group_of.to_vec(),
        centers: Embedding::new(g.value(c).clone())?,
    })
}

pub fn clustering_loss(eeg: &Embedding, groups: &BatchGroups, margin: f64, eps: f64) -> Result<f64> {
    check_unit_rows(eeg, "EEG")?;
    if groups.group_of.len() != eeg.rows() || groups.centers.dim() != eeg.dim() {
        return Err(Error::Argument("batch groups do not match the embedding".into()));
    }
    let mut g = Graph::new();
    let e = g.constant(eeg.tensor().clone());
    let c = g.constant(groups.centers.tensor().clone());
    let l = clustering_graph(&mut g, e, c, &groups.group_of, margin, eps)?;
    Ok(g.value(l).data()[0])
}

/// Clustering loss with centers recomputed from `eeg`, and its full
/// gradient (through the centers) with respect to `eeg`.
pub fn clustering_loss_with_grad(eeg: &Embedding, group_of: &[usize], margin: f64, eps: f64) -> Result<(f64, Tensor)> {
    let mut g = Graph::new();
    let e = g.input(eeg.tensor().clone());
    let c = centers_graph(&mut g, e, group_of)?;
    let l = clustering_graph(&mut g, e, c, group_of, margin, eps)?;
    let grad = g.backward(l)?.get_or_zeros(e, eeg.tensor().shape());
    Ok((g.value(l).data()[0], grad))
}

/// Per-term values of the combined objective.
///
/// A term whose weight is zero is not evaluated and reports 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub align: f64,
    pub mse: f64,
    pub cluster: f64,
}

/// Graph nodes of the combined objective.
pub struct LossNodes {
    pub total: Var,
    pub align: Option<Var>,
    pub mse: Option<Var>,
    pub cluster: Option<Var>,
    pub text: Option<Var>,
}

impl LossNodes {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let v = |n: Option<Var>| n.map_or(0.0, |n| g.value(n).data()[0]);
        LossBreakdown {
            total: g.value(self.total).data()[0],
            align: v(self.align),
            mse: v(self.mse),
            cluster: v(self.cluster),
        }
    }
}

/// `λ1·align + λ2·mse + λ3·cluster (+ text_weight·align(text, eeg))`.
pub fn combined_graph(
    g: &mut Graph,
    image: Var,
    eeg: Var,
    group_of: &[usize],
    cfg: &LossConfig,
    scale: Var,
    text: Option<Var>,
) -> Result<LossNodes> {
    let mut terms: Vec<Var> = Vec::new();
    let mut nodes = LossNodes {
        total: image,
        align: None,
        mse: None,
        cluster: None,
        text: None,
    };
    if cfg.lambda1 > 0.0 {
        let a = align_graph(g, image, eeg, scale)?;
        nodes.align = Some(a);
        terms.push(g.scale(a, cfg.lambda1));
    }
    if cfg.lambda2 > 0.0 {
        let m = mse_graph(g, image, eeg)?;
        nodes.mse = Some(m);
        terms.push(g.scale(m, cfg.lambda2));
    }
    if cfg.lambda3 > 0.0 {
        let centers = centers_graph(g, eeg, group_of)?;
        let c = clustering_graph(g, eeg, centers, group_of, cfg.margin, cfg.epsilon)?;
        nodes.cluster = Some(c);
        terms.push(g.scale(c, cfg.lambda3));
    }
    if let (Some(t), true) = (text, cfg.text_weight > 0.0) {
        let a = align_graph(g, t, eeg, scale)?;
        nodes.text = Some(a);
        terms.push(g.scale(a, cfg.text_weight));
    }
    let mut total = match terms.first() {
        Some(&t) => t,
        None => {
            let zero = g.constant(Tensor::scalar(0.0));
            // keep the output attached to `eeg` so backward yields zeros
            let s = g.sum_all(eeg)?;
            let z = g.mul(s, zero)?;
            g.scale(z, 0.0)
        }
    };
    for &t in terms.iter().skip(1) {
        total = g.add(total, t)?;
    }
    nodes.total = total;
    Ok(nodes)
}

pub fn combined_loss(image: &Embedding, eeg: &Embedding, group_of: &[usize], cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(combined_loss_with_grad(image, eeg, group_of, cfg)?.0)
}

pub fn combined_loss_with_grad(
    image: &Embedding,
    eeg: &Embedding,
    group_of: &[usize],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Tensor)> {
    cfg.validate()?;
    check_shapes(image, eeg, "combined loss")?;
    if cfg.lambda1 > 0.0 {
        check_unit_rows(image, "image")?;
        check_unit_rows(eeg, "EEG")?;
    }
    let mut g = Graph::new();
    let i = g.constant(image.tensor().clone());
    let e = g.input(eeg.tensor().clone());
    let s = g.constant(Tensor::scalar(1.0 / cfg.temperature));
    let nodes = combined_graph(&mut g, i, e, group_of, cfg, s, None)?;
    let grad = g.backward(nodes.total)?.get_or_zeros(e, eeg.tensor().shape());
    Ok((nodes.breakdown(&g), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn emb(rows: &[&[f64]]) -> Embedding {
        Embedding::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_pair_align_is_zero() {
        let a = emb(&[&[0.6, 0.8]]);
        assert_abs_diff_eq!(align_loss(&a, &a, 0.07).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn orthonormal_pairs_closed_form() {
        let a = emb(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let expected = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
        assert_abs_diff_eq!(align_loss(&a, &a, 1.0).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.31326, epsilon = 1e-5);
    }

    #[test]
    fn align_is_symmetric_in_roles() {
        let a = emb(&[&[1.0, 0.0], &[0.6, 0.8], &[0.0, 1.0]]);
        let b = emb(&[&[0.8, 0.6], &[0.0, 1.0], &[-1.0, 0.0]]);
        assert_abs_diff_eq!(align_loss(&a, &b, 0.5).unwrap(), align_loss(&b, &a, 0.5).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn align_rejects_unnormalized_and_mismatched() {
        let a = emb(&[&[1.0, 0.0]]);
        assert!(align_loss(&a, &emb(&[&[2.0, 0.0]]), 1.0).is_err());
        assert!(align_loss(&a, &emb(&[&[1.0, 0.0], &[0.0, 1.0]]), 1.0).is_err());
    }

    #[test]
    fn mse_values() {
        let z = emb(&[&[0.0; 4]]);
        let o = emb(&[&[1.0; 4]]);
        assert_abs_diff_eq!(mse_loss(&z, &o).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(mse_loss(&o, &o).unwrap(), 0.0);
        assert_eq!(mse_loss(&z, &o).unwrap(), mse_loss(&o, &z).unwrap());
    }

    #[test]
    fn centers_identity_and_degenerate() {
        let v = [0.6, 0.8];
        let g = batch_centers(&emb(&[&v, &v]), &[0, 0]).unwrap();
        assert!(g.centers.tensor().max_abs_diff(&Tensor::new(vec![1, 2], v.to_vec()).unwrap()) < 1e-12);
        let err = batch_centers(&emb(&[&[1.0, 0.0], &[-1.0, 0.0]]), &[0, 0]).unwrap_err();
        assert!(err.to_string().contains("degenerate center"));
        assert!(batch_centers(&emb(&[&[1.0, 0.0]]), &[1]).is_err());
    }

    #[test]
    fn clustering_single_group_is_log_term_only() {
        let e = emb(&[&[1.0, 0.0], &[0.6, 0.8]]);
        let groups = batch_centers(&e, &[0, 0]).unwrap();
        let c = groups.centers.row(0).to_vec();
        let expected: f64 = (0..2)
            .map(|k| -((1.0 + crate::embedding::dot(e.row(k), &c)) / 2.0 + 1e-8).ln())
            .sum::<f64>()
            / 2.0;
        assert_abs_diff_eq!(clustering_loss(&e, &groups, 0.5, 1e-8).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn colinear_with_wrong_center_pays_full_margin() {
        // sample 0 sits on center 1: s = 1 → margin term 1 - 0.5
        let e = emb(&[&[0.0, 1.0]]);
        let groups = BatchGroups {
            group_of: vec![0],
            centers: emb(&[&[1.0, 0.0], &[0.0, 1.0]]),
        };
        // own center orthogonal: s = 0.5
        let expected = 0.5 - (0.5f64 + 1e-8).ln();
        let got = clustering_loss(&e, &groups, 0.5, 1e-8);
        // group 1 has no members, so contiguity rejects this layout
        assert!(got.is_err());
        let e2 = emb(&[&[0.0, 1.0], &[0.0, 1.0]]);
        let groups2 = BatchGroups {
            group_of: vec![0, 1],
            centers: emb(&[&[1.0, 0.0], &[0.0, 1.0]]),
        };
        let total = clustering_loss(&e2, &groups2, 0.5, 1e-8).unwrap();
        // sample 1 is on its own center: 0 margin (s(·, c0) = 0.5), -log(1 + ε)
        let second = -(1.0f64 + 1e-8).ln();
        assert_abs_diff_eq!(total, (expected + second) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn labels_to_groups() {
        assert_eq!(groups_from_labels(&["b", "a", "b", "c"]), vec![0, 1, 0, 2]);
    }

    #[test]
    fn combined_weights() {
        let i = emb(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        let e = emb(&[&[0.8, 0.6], &[0.0, 1.0], &[1.0, 0.0]]);
        let groups = [0, 1, 0];
        let only_align = LossConfig { lambda2: 0.0, lambda3: 0.0, ..Default::default() };
        let b = combined_loss(&i, &e, &groups, &only_align).unwrap();
        assert_abs_diff_eq!(b.total, align_loss(&i, &e, 0.07).unwrap(), epsilon = 1e-12);
        let none = LossConfig { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, ..Default::default() };
        let (b, grad) = combined_loss_with_grad(&i, &e, &groups, &none).unwrap();
        assert_eq!(b.total, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }
}

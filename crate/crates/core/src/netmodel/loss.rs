//! Adaptation losses and their gradients with respect to logits or embeddings.
//!
//! Every logarithm is guarded by [`LOSS_EPS`]; gradients are derived for the
//! guarded expressions so they match finite differences exactly.

use crate::correlation::{correlation_index, DENOM_EPS};
use crate::data::{softmax, LabelVector, Matrix};
use crate::error::{Error, Result};

pub const LOSS_EPS: f64 = 1e-8;

/// Per-sample weights for the weighted cross-entropy term.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchWeights {
    pub w: Vec<f64>,
}

impl BatchWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::invalid(format!("batch weight {i} is not a positive finite number")));
        }
        Ok(Self { w })
    }

    pub fn ones(n: usize) -> Self {
        Self { w: vec![1.0; n] }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub wce: f64,
    pub im: f64,
    pub cc: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        total_loss(self.wce, self.im, self.cc)
    }
}

/// Unit-weight sum of the three terms.
pub fn total_loss(wce: f64, im: f64, cc: f64) -> f64 {
    wce + im + cc
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        p.row_mut(r).copy_from_slice(&softmax(logits.row(r)));
    }
    p
}

/// Pulls a per-probability gradient back through the row softmax:
/// `dL/dz_c = p_c (g_c - sum_k p_k g_k)`.
fn through_softmax(probs: &Matrix, dp: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = dp.row(r);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (c, out) in dz.row_mut(r).iter_mut().enumerate() {
            *out = p[c] * (g[c] - dot);
        }
    }
    dz
}

/// Mean over the batch of `-w_i sum_c q_ic log(p_ic + eps)` and its logit
/// gradient, for arbitrary target distributions `q`.
pub(crate) fn soft_ce_with_grad(logits: &Matrix, targets: &Matrix, weights: &[f64]) -> (f64, Matrix) {
    let n = logits.rows() as f64;
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut dp = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let (p, q, w) = (probs.row(r), targets.row(r), weights[r]);
        let mut li = 0.0;
        for c in 0..p.len() {
            if q[c] != 0.0 {
                li -= q[c] * (p[c] + LOSS_EPS).ln();
                dp.set(r, c, -w * q[c] / ((p[c] + LOSS_EPS) * n));
            }
        }
        loss += w * li;
    }
    (loss / n, through_softmax(&probs, &dp))
}

pub(crate) fn one_hot(labels: &[usize], m: usize) -> Matrix {
    let mut t = Matrix::zeros(labels.len(), m);
    for (r, &y) in labels.iter().enumerate() {
        t.set(r, y, 1.0);
    }
    t
}

pub(crate) fn smoothed_targets(labels: &[usize], m: usize, alpha: f64) -> Matrix {
    let mut t = Matrix::from_vec(labels.len(), m, vec![alpha / m as f64; labels.len() * m]);
    for (r, &y) in labels.iter().enumerate() {
        t.set(r, y, 1.0 - alpha + alpha / m as f64);
    }
    t
}

/// Weighted cross-entropy, `mean_i(-w_i log p_{y_i})`.
pub fn loss_wce(logits: &Matrix, labels: &LabelVector, weights: &BatchWeights) -> f64 {
    let t = one_hot(labels.as_slice(), logits.cols());
    soft_ce_with_grad(logits, &t, &weights.w).0
}

/// Label-smoothed cross-entropy used for source training; `alpha = 0` is the
/// plain cross-entropy.
pub fn loss_smoothed_ce(logits: &Matrix, labels: &LabelVector, alpha: f64) -> f64 {
    let t = smoothed_targets(labels.as_slice(), logits.cols(), alpha);
    soft_ce_with_grad(logits, &t, &vec![1.0; logits.rows()]).0
}

/// Information maximization:
/// `sum_c mu_c log mu_c + mean_i(-sum_c p_ic log p_ic)` with `mu` the batch
/// mean prediction.
pub fn loss_im(logits: &Matrix) -> f64 {
    im_with_grad(logits).0
}

pub(crate) fn im_with_grad(logits: &Matrix) -> (f64, Matrix) {
    let (rows, m) = (logits.rows(), logits.cols());
    let n = rows as f64;
    let probs = softmax_rows(logits);
    let mut mu = vec![0.0; m];
    for r in 0..rows {
        for (acc, p) in mu.iter_mut().zip(probs.row(r)) {
            *acc += p;
        }
    }
    mu.iter_mut().for_each(|v| *v /= n);

    let diversity: f64 = mu.iter().map(|&u| u * (u + LOSS_EPS).ln()).sum();
    let mut sharpness = 0.0;
    let mut dp = Matrix::zeros(rows, m);
    let dmu: Vec<f64> = mu
        .iter()
        .map(|&u| ((u + LOSS_EPS).ln() + u / (u + LOSS_EPS)) / n)
        .collect();
    for r in 0..rows {
        let p = probs.row(r);
        for c in 0..m {
            sharpness -= p[c] * (p[c] + LOSS_EPS).ln();
            let dent = -((p[c] + LOSS_EPS).ln() + p[c] / (p[c] + LOSS_EPS)) / n;
            dp.set(r, c, dmu[c] + dent);
        }
    }
    (diversity + sharpness / n, through_softmax(&probs, &dp))
}

/// Central correlation loss, `mean_i(1 - C(f_i, o_i))` with `o_i` the
/// centroid assigned to sample `i`.
pub fn loss_cc(embeddings: &Matrix, assigned_centroids: &Matrix) -> f64 {
    let n = embeddings.rows() as f64;
    embeddings
        .iter_rows()
        .zip(assigned_centroids.iter_rows())
        .map(|(f, o)| 1.0 - correlation_index(f, o))
        .sum::<f64>()
        / n
}

/// Gradient of `C(a, b)` with respect to `a`, matching the guarded and
/// clamped definition of [`correlation_index`].
pub(crate) fn correlation_grad_a(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / d;
    let mean_b = b.iter().sum::<f64>() / d;
    let ac: Vec<f64> = a.iter().map(|x| x - mean_a).collect();
    let bc: Vec<f64> = b.iter().map(|x| x - mean_b).collect();
    let sab: f64 = ac.iter().zip(&bc).map(|(x, y)| x * y).sum();
    let saa: f64 = ac.iter().map(|x| x * x).sum();
    let sbb: f64 = bc.iter().map(|x| x * x).sum();
    let (na, nb) = (saa.sqrt(), sbb.sqrt());
    let prod = na * nb;
    if prod <= DENOM_EPS {
        let raw = sab / DENOM_EPS;
        if raw.abs() >= 1.0 {
            return vec![0.0; a.len()];
        }
        return bc.iter().map(|y| y / DENOM_EPS).collect();
    }
    let c = sab / prod;
    if c.abs() > 1.0 {
        return vec![0.0; a.len()];
    }
    // Both centered vectors sum to zero, so the centering projection is a
    // no-op on this expression.
    ac.iter()
        .zip(&bc)
        .map(|(x, y)| y / prod - c * x / saa)
        .collect()
}

pub(crate) fn cc_with_grad(embeddings: &Matrix, centroids: &Matrix) -> (f64, Matrix) {
    let n = embeddings.rows() as f64;
    let mut grad = Matrix::zeros(embeddings.rows(), embeddings.cols());
    for r in 0..embeddings.rows() {
        let g = correlation_grad_a(embeddings.row(r), centroids.row(r));
        for (out, v) in grad.row_mut(r).iter_mut().zip(g) {
            *out = -v / n;
        }
    }
    (loss_cc(embeddings, centroids), grad)
}

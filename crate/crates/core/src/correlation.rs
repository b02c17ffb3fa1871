//! Correlation index between embeddings, correlation-ranked neighbor graphs
//! and neighbor prediction entropy.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{min_max_normalize, FeatureMatrix, ProbMatrix};
use crate::error::{Error, Result};

/// Guard on the product of centered norms.
pub const DENOM_EPS: f64 = 1e-12;
/// Guard inside entropy logarithms.
pub const LOG_EPS: f64 = 1e-8;

/// Pearson correlation of two vectors taken across their coordinates.
///
/// Zero-variance inputs yield 0. The result is clamped to `[-1, 1]`.
pub fn correlation_index(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let da = x - mean_a;
        let db = y - mean_b;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    let denom = (saa.sqrt() * sbb.sqrt()).max(DENOM_EPS);
    (sab / denom).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    (sab / (saa.sqrt() * sbb.sqrt()).max(DENOM_EPS)).clamp(-1.0, 1.0)
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Pairwise similarity used to rank neighbors and score samples against
/// centroids. Larger is always more similar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Correlation,
    Cosine,
    /// Negated Euclidean distance.
    Euclidean,
}

impl Similarity {
    #[inline]
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Similarity::Correlation => correlation_index(a, b),
            Similarity::Cosine => cosine_similarity(a, b),
            Similarity::Euclidean => -euclidean_distance(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Similarity::Correlation => "correlation",
            Similarity::Cosine => "cosine",
            Similarity::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlation" => Ok(Similarity::Correlation),
            "cosine" => Ok(Similarity::Cosine),
            "euclidean" => Ok(Similarity::Euclidean),
            other => Err(Error::invalid(format!(
                "unknown metric {other:?} (expected correlation, cosine or euclidean)"
            ))),
        }
    }
}

/// For each sample, its `k` most similar other samples, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    k: usize,
    n: usize,
    neighbors: Vec<usize>,
    values: Vec<f64>,
}

impl NeighborGraph {
    /// A graph with no neighbors, used when neighborhood exclusion is off.
    pub fn empty(n: usize) -> Self {
        Self {
            k: 0,
            n,
            neighbors: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn values(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// One line per sample: index, k neighbor indices, k similarity values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        for i in 0..self.n {
            let mut fields = vec![i.to_string()];
            fields.extend(self.neighbors(i).iter().map(|j| j.to_string()));
            fields.extend(self.values(i).iter().map(|v| v.to_string()));
            writeln!(w, "{}", fields.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub fn knn_by_correlation(features: &FeatureMatrix, k: usize) -> Result<NeighborGraph> {
    knn_by_similarity(features, k, Similarity::Correlation)
}

/// Exact KNN under `metric`. Ties in similarity go to the lower index.
pub fn knn_by_similarity(
    features: &FeatureMatrix,
    k: usize,
    metric: Similarity,
) -> Result<NeighborGraph> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!(
            "k must satisfy 1 <= k <= n-1 (k={k}, n={n})"
        )));
    }
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = features.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (metric.eval(xi, features.row(j)), j))
                .collect();
            let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, order);
                cand.truncate(k);
            }
            cand.sort_unstable_by(order);
            cand.into_iter().map(|(v, j)| (j, v)).unzip()
        })
        .collect();
    let mut neighbors = Vec::with_capacity(n * k);
    let mut values = Vec::with_capacity(n * k);
    for (idx, vals) in rows {
        neighbors.extend(idx);
        values.extend(vals);
    }
    Ok(NeighborGraph {
        k,
        n,
        neighbors,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyScores {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Shannon entropy with the log guard, `-sum p log(p + eps)`.
pub fn guarded_entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&q| q * (q + LOG_EPS).ln()).sum::<f64>()
}

/// Entropy of the neighbor-averaged class distribution of every sample.
///
/// With an empty graph (`k = 0`) each sample's own prediction is used.
pub fn neighbor_entropy(graph: &NeighborGraph, probs: &ProbMatrix) -> Result<EntropyScores> {
    if probs.rows() != graph.len() {
        return Err(Error::DimensionMismatch {
            context: "neighbor_entropy probs rows",
            expected: graph.len(),
            found: probs.rows(),
        });
    }
    let m = probs.cols();
    let raw: Vec<f64> = (0..graph.len())
        .map(|i| {
            if graph.k() == 0 {
                return guarded_entropy(probs.row(i));
            }
            let mut avg = vec![0.0; m];
            for &j in graph.neighbors(i) {
                for (a, p) in avg.iter_mut().zip(probs.row(j)) {
                    *a += p;
                }
            }
            let k = graph.k() as f64;
            avg.iter_mut().for_each(|a| *a /= k);
            guarded_entropy(&avg)
        })
        .collect();
    let normalized = min_max_normalize(&raw);
    Ok(EntropyScores { raw, normalized })
}

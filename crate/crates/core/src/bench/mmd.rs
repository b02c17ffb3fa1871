//! Class-to-centroid discrepancy.

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::pseudolabel::Centroids;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MmdKernel {
    /// Squared distance between the class mean and its centroid.
    #[default]
    Linear,
    /// Squared RBF-kernel MMD between a class and a point mass at its
    /// centroid, bandwidth from the median pairwise squared distance.
    Rbf,
}

impl std::str::FromStr for MmdKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(MmdKernel::Linear),
            "rbf" => Ok(MmdKernel::Rbf),
            other => Err(Error::invalid(format!("unknown kernel {other:?}; valid: linear, rbf"))),
        }
    }
}

const BANDWIDTH_SAMPLE: usize = 256;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_shapes(embeddings: &FeatureMatrix, labels: &[usize], centroids: &Centroids) -> Result<()> {
    if labels.len() != embeddings.rows() {
        return Err(Error::DimensionMismatch {
            context: "mmd labels",
            expected: embeddings.rows(),
            found: labels.len(),
        });
    }
    if centroids.dim() != embeddings.cols() {
        return Err(Error::DimensionMismatch {
            context: "mmd centroid dim",
            expected: embeddings.cols(),
            found: centroids.dim(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= centroids.num_classes()) {
        return Err(Error::invalid(format!("label {bad} has no centroid")));
    }
    Ok(())
}

/// Linear-kernel discrepancy averaged over classes. Every class must have
/// at least one sample.
pub fn mmd_to_centroids(embeddings: &FeatureMatrix, labels: &[usize], centroids: &Centroids) -> Result<f64> {
    mmd_with_kernel(embeddings, labels, centroids, MmdKernel::Linear)
}

pub fn mmd_with_kernel(
    embeddings: &FeatureMatrix,
    labels: &[usize],
    centroids: &Centroids,
    kernel: MmdKernel,
) -> Result<f64> {
    check_shapes(embeddings, labels, centroids)?;
    let members = members(labels, centroids.num_classes());
    if let Some(c) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::EmptyClass { class: c });
    }
    Ok(average(embeddings, &members, centroids, kernel))
}

/// Like [`mmd_with_kernel`] but averages over non-empty classes only.
pub fn mmd_present_classes(
    embeddings: &FeatureMatrix,
    labels: &[usize],
    centroids: &Centroids,
    kernel: MmdKernel,
) -> Result<f64> {
    check_shapes(embeddings, labels, centroids)?;
    let members = members(labels, centroids.num_classes());
    Ok(average(embeddings, &members, centroids, kernel))
}

fn members(labels: &[usize], m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); m];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

fn average(embeddings: &FeatureMatrix, members: &[Vec<usize>], centroids: &Centroids, kernel: MmdKernel) -> f64 {
    let gamma = match kernel {
        MmdKernel::Linear => 0.0,
        MmdKernel::Rbf => 1.0 / median_sq_distance(embeddings).max(1e-12),
    };
    let mut total = 0.0;
    let mut classes = 0usize;
    for (c, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let o = centroids.centroid(c);
        total += match kernel {
            MmdKernel::Linear => {
                let d = embeddings.cols();
                let mut mean = vec![0.0; d];
                for &i in idx {
                    mean.iter_mut().zip(embeddings.row(i)).for_each(|(a, x)| *a += x);
                }
                mean.iter_mut().for_each(|a| *a /= idx.len() as f64);
                sq_dist(&mean, o)
            }
            MmdKernel::Rbf => {
                let nc = idx.len() as f64;
                let mut kxx = 0.0;
                for &i in idx {
                    for &j in idx {
                        kxx += (-gamma * sq_dist(embeddings.row(i), embeddings.row(j))).exp();
                    }
                }
                let kxo: f64 = idx
                    .iter()
                    .map(|&i| (-gamma * sq_dist(embeddings.row(i), o)).exp())
                    .sum();
                (kxx / (nc * nc) - 2.0 * kxo / nc + 1.0).max(0.0)
            }
        };
        classes += 1;
    }
    if classes == 0 {
        0.0
    } else {
        total / classes as f64
    }
}

/// Median of pairwise squared distances among the first rows.
fn median_sq_distance(embeddings: &FeatureMatrix) -> f64 {
    let n = embeddings.rows().min(BANDWIDTH_SAMPLE);
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(embeddings.row(i), embeddings.row(j)));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

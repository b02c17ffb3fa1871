//! Class centroids and homogeneity-weighted pseudo-labels.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::correlation::Similarity;
use crate::data::{argmax, min_max_normalize, FeatureMatrix, Matrix, ProbMatrix};
use crate::error::{Error, Result};
use crate::hpe::HomogeneityScores;

/// Below this total probability mass a class centroid is undefined.
pub const MIN_CLASS_MASS: f64 = 1e-12;

/// `M x D` matrix of class centroids in embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub o: Matrix,
}

impl Centroids {
    pub fn num_classes(&self) -> usize {
        self.o.rows()
    }

    pub fn dim(&self) -> usize {
        self.o.cols()
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        self.o.row(c)
    }
}

/// Probability-weighted mean embedding per class over the whole set.
pub fn compute_centroids(embeddings: &FeatureMatrix, probs: &ProbMatrix) -> Result<Centroids> {
    if embeddings.rows() != probs.rows() {
        return Err(Error::DimensionMismatch {
            context: "compute_centroids rows",
            expected: embeddings.rows(),
            found: probs.rows(),
        });
    }
    let (m, d) = (probs.cols(), embeddings.cols());
    let mut o = Matrix::zeros(m, d);
    let mut mass = vec![0.0; m];
    for (f, p) in embeddings.iter_rows().zip(probs.iter_rows()) {
        for c in 0..m {
            mass[c] += p[c];
            let row = o.row_mut(c);
            for (acc, &x) in row.iter_mut().zip(f) {
                *acc += p[c] * x;
            }
        }
    }
    for (c, &w) in mass.iter().enumerate() {
        if w < MIN_CLASS_MASS {
            return Err(Error::DegenerateClass { class: c });
        }
        o.row_mut(c).iter_mut().for_each(|v| *v /= w);
    }
    Ok(Centroids { o })
}

/// Pseudo-labels for the unlabeled samples, aligned with `indices`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    /// `max_c z_{i,c}`.
    pub scores: Vec<f64>,
    pub z_norm: Vec<f64>,
    /// Samples whose homogeneity is zero, so every class scored zero.
    pub zero_confidence: Vec<usize>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Fraction of pseudo-labels matching `truth` (indexed by sample).
    pub fn accuracy(&self, truth: &[usize]) -> f64 {
        if self.indices.is_empty() {
            return 1.0;
        }
        let hits = self
            .indices
            .iter()
            .zip(&self.labels)
            .filter(|(&i, &l)| truth[i] == l)
            .count();
        hits as f64 / self.indices.len() as f64
    }

    /// Appends `round,sample_index,label,z,z_norm` rows.
    pub fn append_csv(&self, path: &Path, round: usize) -> Result<()> {
        let new = !path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        if new {
            writeln!(w, "round,sample_index,label,z,z_norm").map_err(io)?;
        }
        for k in 0..self.indices.len() {
            writeln!(
                w,
                "{round},{},{},{},{}",
                self.indices[k], self.labels[k], self.scores[k], self.z_norm[k]
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub fn assign_pseudo_labels(
    embeddings: &FeatureMatrix,
    centroids: &Centroids,
    h: &HomogeneityScores,
    unlabeled: &[usize],
) -> Result<PseudoLabelSet> {
    assign_pseudo_labels_with(embeddings, centroids, h, unlabeled, Similarity::Correlation)
}

/// `z_{i,c} = sim(f_i, o_c) * h_i`, label `argmax_c z_{i,c}`.
///
/// For `h_i > 0` the argmax is taken over the similarities directly, which is
/// the same class and avoids rounding ties introduced by the product. For
/// `h_i = 0` every class scores zero and the tie rule returns class 0.
pub fn assign_pseudo_labels_with(
    embeddings: &FeatureMatrix,
    centroids: &Centroids,
    h: &HomogeneityScores,
    unlabeled: &[usize],
    metric: Similarity,
) -> Result<PseudoLabelSet> {
    if h.raw.len() != embeddings.rows() {
        return Err(Error::DimensionMismatch {
            context: "assign_pseudo_labels homogeneity scores",
            expected: embeddings.rows(),
            found: h.raw.len(),
        });
    }
    if centroids.dim() != embeddings.cols() {
        return Err(Error::DimensionMismatch {
            context: "assign_pseudo_labels centroid dimension",
            expected: embeddings.cols(),
            found: centroids.dim(),
        });
    }
    let assigned: Vec<(usize, f64)> = unlabeled
        .par_iter()
        .map(|&i| {
            let f = embeddings.row(i);
            let hi = h.raw[i];
            if hi == 0.0 {
                return (0, 0.0);
            }
            let sims: Vec<f64> = (0..centroids.num_classes())
                .map(|c| metric.eval(f, centroids.centroid(c)))
                .collect();
            let label = argmax(&sims);
            (label, sims[label] * hi)
        })
        .collect();
    let (labels, scores): (Vec<usize>, Vec<f64>) = assigned.into_iter().unzip();
    let zero_confidence = unlabeled
        .iter()
        .copied()
        .filter(|&i| h.raw[i] == 0.0)
        .collect();
    let z_norm = if scores.is_empty() {
        Vec::new()
    } else {
        min_max_normalize(&scores)
    };
    Ok(PseudoLabelSet {
        indices: unlabeled.to_vec(),
        labels,
        scores,
        z_norm,
        zero_confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_probs_give_class_means() {
        let f = FeatureMatrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 4.0], vec![10.0, 10.0]]).unwrap();
        let p = ProbMatrix::new(3, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = compute_centroids(&f, &p).unwrap();
        assert_eq!(c.centroid(0), &[1.0, 3.0]);
        assert_eq!(c.centroid(1), &[10.0, 10.0]);
    }

    #[test]
    fn uniform_probs_give_global_mean() {
        let f = FeatureMatrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let p = ProbMatrix::new(2, 2, vec![0.5; 4]).unwrap();
        let c = compute_centroids(&f, &p).unwrap();
        assert_eq!(c.centroid(0), &[1.0, 3.0]);
        assert_eq!(c.centroid(1), &[1.0, 3.0]);
    }

    #[test]
    fn soft_weights_hand_case() {
        let rows = [vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]];
        let f = FeatureMatrix::from_rows(&rows).unwrap();
        let p = ProbMatrix::new(3, 2, vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5]).unwrap();
        let c = compute_centroids(&f, &p).unwrap();
        let expected = [(0.9 * 1.0 + 0.5 * 2.0) / 1.6, (0.2 * 1.0 + 0.5 * 2.0) / 1.6];
        for d in 0..2 {
            assert!((c.centroid(0)[d] - expected[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn massless_class_is_degenerate() {
        let f = FeatureMatrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let p = ProbMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            compute_centroids(&f, &p),
            Err(Error::DegenerateClass { class: 2 })
        ));
    }

    fn centroids(rows: &[Vec<f64>]) -> Centroids {
        Centroids {
            o: FeatureMatrix::from_rows(rows).unwrap().into_matrix(),
        }
    }

    #[test]
    fn perfect_correlation_wins() {
        let c = centroids(&[vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]]);
        let f = FeatureMatrix::from_rows(&[vec![2.0, 4.0, 6.0]]).unwrap();
        let h = HomogeneityScores::from_raw(vec![3.0]);
        let pl = assign_pseudo_labels(&f, &c, &h, &[0]).unwrap();
        assert_eq!(pl.labels, vec![0]);
        assert!((pl.scores[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_homogeneity_defaults_to_class_zero() {
        let c = centroids(&[vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]]);
        let f = FeatureMatrix::from_rows(&[vec![3.0, 1.0, 2.0]]).unwrap();
        let h = HomogeneityScores::from_raw(vec![0.0]);
        let pl = assign_pseudo_labels(&f, &c, &h, &[0]).unwrap();
        assert_eq!(pl.labels, vec![0]);
        assert_eq!(pl.zero_confidence, vec![0]);
    }

    #[test]
    fn dump_has_header_once() {
        let c = centroids(&[vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]]);
        let f = FeatureMatrix::from_rows(&[vec![3.0, 1.0, 2.0], vec![1.0, 2.0, 3.5]]).unwrap();
        let h = HomogeneityScores::from_raw(vec![1.0, 2.0]);
        let pl = assign_pseudo_labels(&f, &c, &h, &[0, 1]).unwrap();
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("pl.csv");
        pl.append_csv(&p, 0).unwrap();
        pl.append_csv(&p, 1).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 + 2);
        assert!(text.starts_with("round,sample_index"));
    }
}

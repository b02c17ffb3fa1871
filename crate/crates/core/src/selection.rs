//! Selection scores and budgeted, neighborhood-excluding active selection.

use serde::{Deserialize, Serialize};

use crate::correlation::{EntropyScores, NeighborGraph};
use crate::data::LabelVector;
use crate::error::{Error, Result};
use crate::hpe::HomogeneityScores;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionScores {
    pub u: Vec<f64>,
}

/// `U_i = h_norm[i] * E_norm[i]`.
pub fn selection_scores(h: &HomogeneityScores, e: &EntropyScores) -> Result<SelectionScores> {
    if h.normalized.len() != e.normalized.len() {
        return Err(Error::DimensionMismatch {
            context: "selection_scores",
            expected: h.normalized.len(),
            found: e.normalized.len(),
        });
    }
    let u = h
        .normalized
        .iter()
        .zip(&e.normalized)
        .map(|(a, b)| a * b)
        .collect();
    Ok(SelectionScores { u })
}

/// The labeled subset chosen before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub budget_fraction: f64,
    /// Sorted, unique sample indices.
    pub indices: Vec<usize>,
    /// Oracle labels aligned with `indices`.
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `mask[i]` is true when sample `i` is in the set.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }

    /// Builds a set from picked indices in any order.
    pub fn from_picks(
        mut picks: Vec<usize>,
        budget_fraction: f64,
        oracle: &LabelVector,
        warning: Option<String>,
    ) -> Self {
        picks.sort_unstable();
        picks.dedup();
        let labels = picks.iter().map(|&i| oracle.get(i)).collect();
        Self {
            budget_fraction,
            indices: picks,
            labels,
            warning,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) fn check_budget(b: f64) -> Result<()> {
    if !(b > 0.0 && b <= 1.0) {
        return Err(Error::invalid(format!("budget fraction must be in (0, 1], got {b}")));
    }
    Ok(())
}

/// `ceil(B * n)`, with a small tolerance so that products such as
/// `0.1 * 30` do not round up past the intended count.
pub fn budget_count(budget_fraction: f64, n: usize) -> usize {
    let raw = budget_fraction * n as f64;
    ((raw - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Greedy selection: repeatedly take the highest-scoring sample that has not
/// been excluded (ties to the lowest index) and exclude its `K` neighbors.
pub fn select_active(
    scores: &SelectionScores,
    graph: &NeighborGraph,
    budget_fraction: f64,
    oracle: &LabelVector,
) -> Result<ActiveSet> {
    check_budget(budget_fraction)?;
    let n = scores.u.len();
    if n == 0 {
        return Err(Error::EmptyCandidatePool);
    }
    if graph.len() != n {
        return Err(Error::DimensionMismatch {
            context: "select_active graph size",
            expected: n,
            found: graph.len(),
        });
    }
    oracle.check_len(n, "select_active oracle labels")?;

    let target = budget_count(budget_fraction, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.u[b].total_cmp(&scores.u[a]).then(a.cmp(&b)));

    let mut excluded = vec![false; n];
    let mut picks = Vec::with_capacity(target);
    for i in order {
        if picks.len() == target {
            break;
        }
        if excluded[i] {
            continue;
        }
        picks.push(i);
        excluded[i] = true;
        if graph.k() > 0 {
            for &j in graph.neighbors(i) {
                excluded[j] = true;
            }
        }
    }
    let warning = (picks.len() < target).then(|| {
        format!(
            "neighborhood exclusion exhausted the pool: selected {} of {} requested",
            picks.len(),
            target
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(ActiveSet::from_picks(picks, budget_fraction, oracle, warning))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::knn_by_correlation;
    use crate::data::FeatureMatrix;

    fn scores_from(h: Vec<f64>, e: Vec<f64>) -> SelectionScores {
        selection_scores(
            &HomogeneityScores {
                raw: h.clone(),
                normalized: h,
            },
            &EntropyScores {
                raw: e.clone(),
                normalized: e,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_homogeneity_annihilates() {
        let s = scores_from(vec![0.0, 1.0], vec![1.0, 1.0]);
        assert_eq!(s.u[0], 0.0);
    }

    #[test]
    fn product_case() {
        let s = scores_from(vec![1.0, 0.5], vec![0.5, 1.0]);
        assert_eq!(s.u, vec![0.5, 0.5]);
    }

    #[test]
    fn degenerate_h_orders_by_entropy() {
        let h = HomogeneityScores::from_raw(vec![3.0, 3.0, 3.0]);
        let e = EntropyScores {
            raw: vec![0.1, 0.9, 0.5],
            normalized: crate::data::min_max_normalize(&[0.1, 0.9, 0.5]),
        };
        let s = selection_scores(&h, &e).unwrap();
        assert_eq!(s.u, vec![0.0, 0.5, 0.25]);
    }

    #[test]
    fn length_mismatch() {
        let h = HomogeneityScores::from_raw(vec![1.0, 2.0]);
        let e = EntropyScores {
            raw: vec![1.0],
            normalized: vec![1.0],
        };
        assert!(selection_scores(&h, &e).is_err());
    }

    #[test]
    fn budget_count_is_ceil() {
        assert_eq!(budget_count(0.05, 795), 40);
        assert_eq!(budget_count(0.1, 30), 3);
        assert_eq!(budget_count(1.0, 4), 4);
        assert_eq!(budget_count(1e-6, 10), 1);
    }

    #[test]
    fn exclusion_exhausts_pool() {
        let f = FeatureMatrix::from_rows(&[
            vec![1.0, 2.0, 0.0],
            vec![0.0, 1.0, 3.0],
            vec![2.0, 0.0, 1.0],
            vec![1.0, 1.5, 4.0],
        ])
        .unwrap();
        let g = knn_by_correlation(&f, 3).unwrap();
        let s = SelectionScores {
            u: vec![0.1, 0.2, 0.3, 0.4],
        };
        let oracle = LabelVector::new(vec![0, 1, 0, 1], 2).unwrap();
        let a = select_active(&s, &g, 1.0, &oracle).unwrap();
        assert_eq!(a.indices, vec![3]);
        assert_eq!(a.labels, vec![1]);
        assert!(a.warning.is_some());
    }

    #[test]
    fn hand_traced_greedy() {
        // neighbor(0) = 1, so picking 0 excludes 1 and the next pick is 2.
        let f = FeatureMatrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![1.0, 2.1, 3.2],
            vec![3.0, 1.0, 2.0],
        ])
        .unwrap();
        let g = knn_by_correlation(&f, 1).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        let s = SelectionScores {
            u: vec![0.9, 0.8, 0.1],
        };
        let oracle = LabelVector::new(vec![0, 0, 1], 2).unwrap();
        let a = select_active(&s, &g, 2.0 / 3.0, &oracle).unwrap();
        assert_eq!(a.indices, vec![0, 2]);
        assert_eq!(a.labels, vec![0, 1]);
        assert!(a.warning.is_none());
    }

    #[test]
    fn rejects_bad_budget() {
        let s = SelectionScores { u: vec![0.5] };
        let g = NeighborGraph::empty(1);
        let oracle = LabelVector::new(vec![0], 1).unwrap();
        assert!(select_active(&s, &g, 0.0, &oracle).is_err());
        assert!(select_active(&s, &g, 1.5, &oracle).is_err());
    }

    #[test]
    fn json_shape() {
        let oracle = LabelVector::new(vec![1, 0, 1], 2).unwrap();
        let a = ActiveSet::from_picks(vec![2, 0], 0.5, &oracle, None);
        let v: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(v["indices"], serde_json::json!([0, 2]));
        assert_eq!(v["labels"], serde_json::json!([1, 1]));
        assert_eq!(v["budget_fraction"], serde_json::json!(0.5));
        assert!(v.get("warning").is_none());
    }
}

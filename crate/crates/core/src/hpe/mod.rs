//! Homogeneity propensity estimation.
//!
//! An ensemble of random separation trees is grown on random subsets of the
//! embeddings. Every sample is then routed through every tree and its
//! homogeneity score is the mean leaf depth it reaches. Samples sitting in
//! dense groups need many splits to be separated and score high; isolated
//! samples are cut off near the root and score low.

mod persist;
mod tree;

pub use persist::{load_ensemble, save_ensemble, ENSEMBLE_MAGIC};
pub use tree::{build_tree, path_length, NodeKind, SeparationNode, SeparationTree};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{min_max_normalize, FeatureMatrix, RandomSource};
use crate::error::{Error, Result};

pub const DEFAULT_TREES: usize = 200;
pub const DEFAULT_SUBSAMPLE: usize = 256;

/// Which sample count sets the depth cap `ceil(log2(count))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthBase {
    /// The per-tree subset size.
    #[default]
    Subset,
    /// The full number of samples.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HpeParams {
    pub trees: usize,
    /// `None` means `min(256, n)`.
    pub subsample_size: Option<usize>,
    pub depth_base: DepthBase,
    pub seed: u64,
}

impl Default for HpeParams {
    fn default() -> Self {
        Self {
            trees: DEFAULT_TREES,
            subsample_size: None,
            depth_base: DepthBase::Subset,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpeEnsemble {
    pub(crate) trees: Vec<SeparationTree>,
    pub(crate) subsample_size: usize,
    pub(crate) max_depth: usize,
    pub(crate) seed: u64,
    pub(crate) dim: usize,
}

impl HpeEnsemble {
    pub fn trees(&self) -> &[SeparationTree] {
        &self.trees
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityScores {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl HomogeneityScores {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let normalized = min_max_normalize(&raw);
        Self { raw, normalized }
    }
}

pub(crate) fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// Grows `g` trees; tree `i` draws its subset and its splits from stream `i`.
pub fn build_ensemble(
    features: &FeatureMatrix,
    g: usize,
    subsample_size: usize,
    seed: u64,
) -> Result<HpeEnsemble> {
    let max_depth = ceil_log2(subsample_size).max(1);
    build_ensemble_with_depth(features, g, subsample_size, max_depth, seed)
}

pub fn build_ensemble_with_params(features: &FeatureMatrix, params: &HpeParams) -> Result<HpeEnsemble> {
    let n = features.rows();
    let sub = params.subsample_size.unwrap_or(DEFAULT_SUBSAMPLE.min(n));
    let depth_count = match params.depth_base {
        DepthBase::Subset => sub,
        DepthBase::Full => n,
    };
    build_ensemble_with_depth(
        features,
        params.trees,
        sub,
        ceil_log2(depth_count).max(1),
        params.seed,
    )
}

fn build_ensemble_with_depth(
    features: &FeatureMatrix,
    g: usize,
    subsample_size: usize,
    max_depth: usize,
    seed: u64,
) -> Result<HpeEnsemble> {
    let n = features.rows();
    if g == 0 {
        return Err(Error::invalid("ensemble needs at least one tree"));
    }
    if subsample_size == 0 || subsample_size > n {
        return Err(Error::invalid(format!(
            "subsample_size must be in 1..={n}, got {subsample_size}"
        )));
    }
    let trees = (0..g)
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::new(seed, i as u64);
            let subset = rng.sample_without_replacement(n, subsample_size);
            build_tree(features, &subset, &mut rng, max_depth)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HpeEnsemble {
        trees,
        subsample_size,
        max_depth,
        seed,
        dim: features.cols(),
    })
}

/// Mean path length of every sample over every tree, plus its min-max
/// normalization.
pub fn homogeneity_scores(ensemble: &HpeEnsemble, features: &FeatureMatrix) -> Result<HomogeneityScores> {
    if features.cols() != ensemble.dim {
        return Err(Error::DimensionMismatch {
            context: "homogeneity_scores feature dimension",
            expected: ensemble.dim,
            found: features.cols(),
        });
    }
    let g = ensemble.trees.len() as f64;
    let raw: Vec<f64> = (0..features.rows())
        .into_par_iter()
        .map(|i| {
            let x = features.row(i);
            let total: f64 = ensemble.trees.iter().map(|t| path_length(t, x)).sum();
            total / g
        })
        .collect();
    Ok(HomogeneityScores::from_raw(raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(256), 8);
        assert_eq!(ceil_log2(257), 9);
    }

    fn blob(n: usize, seed: u64) -> FeatureMatrix {
        let mut r = RandomSource::new(seed, 99);
        let v: Vec<f64> = (0..n * 3).map(|_| r.standard_normal()).collect();
        FeatureMatrix::new(n, 3, v).unwrap()
    }

    #[test]
    fn default_tree_count() {
        let f = blob(50, 1);
        let e = build_ensemble_with_params(&f, &HpeParams::default()).unwrap();
        assert_eq!(e.len(), 200);
        assert_eq!(e.subsample_size(), 50);
        assert_eq!(e.max_depth(), 6);
    }

    #[test]
    fn single_tree_full_data() {
        let f = blob(20, 2);
        let e = build_ensemble(&f, 1, 20, 3).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.trees()[0].root().leaf_size, 20);
    }

    #[test]
    fn same_seed_same_scores() {
        let f = blob(64, 3);
        let a = homogeneity_scores(&build_ensemble(&f, 30, 32, 11).unwrap(), &f).unwrap();
        let b = homogeneity_scores(&build_ensemble(&f, 30, 32, 11).unwrap(), &f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subsample_larger_than_n_is_rejected() {
        let f = blob(10, 4);
        assert!(build_ensemble(&f, 5, 11, 0).is_err());
    }

    #[test]
    fn scores_within_depth_bounds() {
        let f = blob(100, 5);
        let e = build_ensemble(&f, 50, 64, 7).unwrap();
        let s = homogeneity_scores(&e, &f).unwrap();
        assert!(s.raw.iter().all(|&h| h >= 0.0 && h <= e.max_depth() as f64));
        assert!(s.normalized.iter().all(|&h| (0.0..=1.0).contains(&h)));
    }

    #[test]
    fn two_leaf_tree_scores_one() {
        let f = FeatureMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let e = build_ensemble(&f, 1, 2, 0).unwrap();
        let s = homogeneity_scores(&e, &f).unwrap();
        assert_eq!(s.raw, vec![1.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let f = blob(10, 6);
        let e = build_ensemble(&f, 2, 10, 0).unwrap();
        let other = FeatureMatrix::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(homogeneity_scores(&e, &other).is_err());
    }

    #[test]
    fn thread_count_does_not_change_scores() {
        let f = blob(80, 8);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| homogeneity_scores(&build_ensemble(&f, 40, 64, 5).unwrap(), &f).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}

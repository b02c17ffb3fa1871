//! Comparison selection strategies: random, own-entropy ranking, k-means.

use crate::adapt::Strategy;
use crate::correlation::guarded_entropy;
use crate::data::{FeatureMatrix, LabelVector, ProbMatrix, RandomSource};
use crate::error::{Error, Result};
use crate::selection::{budget_count, check_budget, ActiveSet};

pub const KMEANS_ITERATIONS: usize = 50;

const RANDOM_STREAM: u64 = 0x7261_6e64;
const KMEANS_STREAM: u64 = 0x6b6d_6561;

pub fn baseline_select(
    strategy: Strategy,
    features: &FeatureMatrix,
    probs: &ProbMatrix,
    budget_fraction: f64,
    oracle: &LabelVector,
    seed: u64,
) -> Result<ActiveSet> {
    check_budget(budget_fraction)?;
    let n = features.rows();
    if probs.rows() != n {
        return Err(Error::DimensionMismatch {
            context: "baseline_select probs rows",
            expected: n,
            found: probs.rows(),
        });
    }
    oracle.check_len(n, "baseline_select oracle")?;
    let k = budget_count(budget_fraction, n);
    let picks = match strategy {
        Strategy::Random => RandomSource::new(seed, RANDOM_STREAM).sample_without_replacement(n, k),
        Strategy::Entropy => top_entropy(probs, k),
        Strategy::Kmeans => kmeans_select(features, k, seed),
        Strategy::Hpe => {
            return Err(Error::invalid("hpe is not a baseline strategy"));
        }
    };
    Ok(ActiveSet::from_picks(picks, budget_fraction, oracle, None))
}

/// Indices of the `k` highest own-prediction entropies, ties to lower index.
pub fn top_entropy(probs: &ProbMatrix, k: usize) -> Vec<usize> {
    let ent: Vec<f64> = probs.iter_rows().map(guarded_entropy).collect();
    let mut order: Vec<usize> = (0..ent.len()).collect();
    order.sort_by(|&a, &b| ent[b].total_cmp(&ent[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index drawn with probability proportional to `weights`.
fn weighted_draw(weights: &[f64], total: f64, rng: &mut RandomSource) -> usize {
    let target = rng.next_f64() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if acc > target && w > 0.0 {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Lloyd's algorithm with greedy k-means++ seeding: each new center is the
/// best of `2 + ln k` squared-distance-weighted candidates.
///
/// Returns the centers and the final assignment.
pub fn kmeans(features: &FeatureMatrix, k: usize, iterations: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = features.rows();
    let d = features.cols();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut rng = RandomSource::new(seed, KMEANS_STREAM);
    let mut centers: Vec<Vec<f64>> = vec![features.row(rng.below(n)).to_vec()];
    let mut best: Vec<f64> = features.iter_rows().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        if !(total > 0.0) {
            centers.push(features.row(centers.len() % n).to_vec());
            continue;
        }
        let mut chosen: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = weighted_draw(&best, total, &mut rng);
            let c = features.row(cand);
            let potential: Vec<f64> = best
                .iter()
                .zip(features.iter_rows())
                .map(|(&b, x)| b.min(sq_dist(x, c)))
                .collect();
            let pot: f64 = potential.iter().sum();
            if chosen.as_ref().is_none_or(|(p, _, _)| pot < *p) {
                chosen = Some((pot, cand, potential));
            }
        }
        let (_, cand, potential) = chosen.expect("at least one trial");
        best = potential;
        centers.push(features.row(cand).to_vec());
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..iterations {
        let mut changed = false;
        for (i, x) in features.iter_rows().enumerate() {
            let a = nearest(&centers, x);
            if assign[i] != a {
                assign[i] = a;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, x) in features.iter_rows().enumerate() {
            counts[assign[i]] += 1;
            sums[assign[i]].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Move the empty center onto the point worst served by its own.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(features.row(a), &centers[assign[a]]);
                        let db = sq_dist(features.row(b), &centers[assign[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                centers[c] = features.row(far).to_vec();
                assign[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    (centers, assign)
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (c, mu) in centers.iter().enumerate() {
        let dd = sq_dist(x, mu);
        if dd < bd {
            bd = dd;
            best = c;
        }
    }
    best
}

/// One sample per center: the closest not already taken.
pub fn kmeans_select(features: &FeatureMatrix, k: usize, seed: u64) -> Vec<usize> {
    let (centers, _) = kmeans(features, k, KMEANS_ITERATIONS, seed);
    let mut taken = vec![false; features.rows()];
    let mut picks = Vec::with_capacity(k);
    for mu in &centers {
        let pick = features
            .iter_rows()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(i, x)| (i, sq_dist(x, mu)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i);
        if let Some(i) = pick {
            taken[i] = true;
            picks.push(i);
        }
    }
    picks
}

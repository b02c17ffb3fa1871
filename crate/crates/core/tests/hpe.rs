use proulearn::bench::cluster_with_outliers;
use proulearn::data::FeatureMatrix;
use proulearn::hpe::{build_ensemble, homogeneity_scores, HomogeneityScores};

const CLUSTER: usize = 200;
const OUTLIERS: usize = 5;
const TREES: usize = 200;
const STABLE_TREES: usize = 500;

fn scores(x: &FeatureMatrix, g: usize, seed: u64) -> HomogeneityScores {
    let ens = build_ensemble(x, g, x.rows().min(256), seed).unwrap();
    homogeneity_scores(&ens, x).unwrap()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &p in &idx[i..=j] {
            r[p] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Seeds out of 100 in which all outliers rank among the 10 lowest scores.
fn outlier_hits() -> usize {
    let mut hits = 0;
    for seed in 0..100 {
        let x = cluster_with_outliers(CLUSTER, OUTLIERS, 2, seed).unwrap();
        let h = scores(&x, TREES, seed);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        order.sort_by(|&a, &b| h.raw[a].total_cmp(&h.raw[b]).then(a.cmp(&b)));
        let lowest = &order[..10];
        if (CLUSTER..CLUSTER + OUTLIERS).all(|o| lowest.contains(&o)) {
            hits += 1;
        }
    }
    hits
}

#[test]
fn outliers_fill_the_lowest_scores() {
    let hits = outlier_hits();
    assert!(hits >= 90, "outliers in the 10 lowest for only {hits}/100 seeds");
}

#[test]
fn outliers_score_below_cluster_on_average() {
    let mut wins = 0;
    for seed in 0..100 {
        let x = cluster_with_outliers(CLUSTER, OUTLIERS, 2, seed).unwrap();
        let h = scores(&x, TREES, seed);
        let cluster = h.raw[..CLUSTER].iter().sum::<f64>() / CLUSTER as f64;
        let outl = h.raw[CLUSTER..].iter().sum::<f64>() / OUTLIERS as f64;
        if outl < cluster {
            wins += 1;
        }
    }
    assert!(wins >= 95, "{wins}/100");
}

#[test]
fn ranking_is_stable_across_ensemble_seeds() {
    let x = cluster_with_outliers(CLUSTER, OUTLIERS, 2, 3).unwrap();
    for (a, b) in [(0, 1), (5, 17), (100, 2024)] {
        let rho = spearman(&scores(&x, STABLE_TREES, a).raw, &scores(&x, STABLE_TREES, b).raw);
        assert!(rho > 0.8, "seeds {a}/{b}: spearman {rho}");
    }
}

#[test]
fn variance_across_seeds_shrinks_with_more_trees() {
    let x = cluster_with_outliers(CLUSTER, OUTLIERS, 2, 11).unwrap();
    let spread = |g: usize| {
        let runs: Vec<Vec<f64>> = (0..12).map(|s| scores(&x, g, 1000 + s).raw).collect();
        let n = runs.len() as f64;
        (0..x.rows())
            .map(|i| {
                let m = runs.iter().map(|r| r[i]).sum::<f64>() / n;
                runs.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / (n - 1.0)
            })
            .sum::<f64>()
            / x.rows() as f64
    };
    let (small, large) = (spread(10), spread(200));
    assert!(large < small, "g=10: {small}, g=200: {large}");
}

#[test]
fn scores_stay_within_depth_cap() {
    for seed in 0..10 {
        let x = cluster_with_outliers(60, 3, 4, seed).unwrap();
        for sub in [8, 32, 63] {
            let ens = build_ensemble(&x, 25, sub, seed).unwrap();
            let h = homogeneity_scores(&ens, &x).unwrap();
            let cap = ens.max_depth() as f64;
            assert!(h.raw.iter().all(|&v| (0.0..=cap).contains(&v)));
            assert!(h.normalized.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn thread_count_does_not_change_scores() {
    let x = cluster_with_outliers(CLUSTER, OUTLIERS, 3, 5).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| scores(&x, 50, 9).raw)
    };
    let one = run(1);
    for t in [2, 4] {
        let other = run(t);
        assert!(one.iter().zip(&other).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

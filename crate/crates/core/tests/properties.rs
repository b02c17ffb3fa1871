use proptest::prelude::*;

use proulearn::adapt::{adapt_target, AdaptConfig};
use proulearn::correlation::{correlation_index, knn_by_correlation, neighbor_entropy};
use proulearn::data::{FeatureMatrix, LabelVector, ProbMatrix};
use proulearn::hpe::HomogeneityScores;
use proulearn::netmodel::{Architecture, NetModel};
use proulearn::pseudolabel::{assign_pseudo_labels, compute_centroids};
use proulearn::selection::{budget_count, select_active, SelectionScores};
use proulearn::Error;

const CASES: u32 = 1000;

fn spread(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>().sqrt()
}

fn pair(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|d| {
        (
            prop::collection::vec(-100.0f64..100.0, d),
            prop::collection::vec(-100.0f64..100.0, d),
        )
    })
}

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = FeatureMatrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| FeatureMatrix::new(r, c, v).unwrap())
    })
}

fn probs_for(n: usize, m: usize, raw: &[f64]) -> ProbMatrix {
    let mut p = Vec::with_capacity(n * m);
    for r in 0..n {
        let row = &raw[r * m..(r + 1) * m];
        let s: f64 = row.iter().sum();
        p.extend(row.iter().map(|v| v / s));
    }
    ProbMatrix::new(n, m, p).unwrap()
}

fn config() -> ProptestConfig {
    ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(CASES)
    }
}

fn correlation_symmetry() {
    proptest!(config(), |((a, b) in pair(2..24))| {
        prop_assert_eq!(correlation_index(&a, &b), correlation_index(&b, &a));
    });
}

#[test]
fn correlation_is_symmetric() {
    correlation_symmetry();
}

fn affine_invariance() {
    proptest!(config(), |(
        (a, b) in pair(2..24),
        scale in prop_oneof![0.01f64..100.0, -100.0f64..-0.01],
        shift in -1e3f64..1e3,
    )| {
        prop_assume!(spread(&a) > 1e-3 && spread(&b) > 1e-3);
        let moved: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
        let base = correlation_index(&a, &b);
        let expect = if scale > 0.0 { base } else { -base };
        prop_assert!((correlation_index(&moved, &b) - expect).abs() < 1e-9);
        prop_assert!(base.abs() <= 1.0);
    });
}

#[test]
fn correlation_ignores_affine_maps() {
    affine_invariance();
}

fn entropy_bounds() {
    proptest!(config(), |(
        x in matrix(3..30, 2..6),
        m in 2usize..6,
        k_seed in 0usize..1000,
        raw in prop::collection::vec(1e-6f64..1.0, 30 * 6),
    )| {
        let n = x.rows();
        let k = 1 + k_seed % (n - 1);
        let probs = probs_for(n, m, &raw);
        let g = knn_by_correlation(&x, k).unwrap();
        let e = neighbor_entropy(&g, &probs).unwrap();
        let cap = (m as f64).ln() + 1e-12;
        for (&r, &z) in e.raw.iter().zip(&e.normalized) {
            prop_assert!(r >= -1e-12 && r <= cap, "entropy {} outside [0, ln {}]", r, m);
            prop_assert!((0.0..=1.0).contains(&z));
        }
    });
}

#[test]
fn neighbor_entropy_is_bounded() {
    entropy_bounds();
}

fn budget_and_exclusion() {
    proptest!(config(), |(
        x in matrix(2..40, 2..5),
        u in prop::collection::vec(0.0f64..1.0, 40),
        k_seed in 0usize..1000,
        budget in 0.001f64..1.0,
    )| {
        let n = x.rows();
        let k = 1 + k_seed % (n - 1);
        let g = knn_by_correlation(&x, k).unwrap();
        let scores = SelectionScores { u: u[..n].to_vec() };
        let oracle = LabelVector::new(vec![0; n], 1).unwrap();
        let set = select_active(&scores, &g, budget, &oracle).unwrap();
        let cap = (budget * n as f64).ceil() as usize;
        prop_assert!(set.len() <= cap);
        prop_assert!(set.len() >= 1);
        if set.warning.is_none() {
            prop_assert_eq!(set.len(), budget_count(budget, n));
        }
        prop_assert!(set.indices.windows(2).all(|w| w[0] < w[1]));
        let best = (0..n).fold(0, |b, i| if scores.u[i] > scores.u[b] { i } else { b });
        prop_assert!(set.indices.contains(&best));
        // In pick order, no sample sits in the neighbor list of an earlier pick.
        let mut order = set.indices.clone();
        order.sort_by(|&a, &b| scores.u[b].total_cmp(&scores.u[a]).then(a.cmp(&b)));
        for (pos, &i) in order.iter().enumerate() {
            for &earlier in &order[..pos] {
                prop_assert!(!g.neighbors(earlier).contains(&i));
            }
        }
    });
}

#[test]
fn selection_respects_budget_and_exclusion() {
    budget_and_exclusion();
}

fn h_scaling_invariance() {
    proptest!(config(), |(
        x in matrix(4..30, 2..6),
        m in 2usize..5,
        raw in prop::collection::vec(1e-3f64..1.0, 30 * 5),
        h in prop::collection::vec(0.0f64..10.0, 30),
        factor in 1e-3f64..1e3,
    )| {
        let n = x.rows();
        let probs = probs_for(n, m, &raw);
        let cent = compute_centroids(&x, &probs).unwrap();
        let unlabeled: Vec<usize> = (0..n).collect();
        let a = assign_pseudo_labels(&x, &cent, &HomogeneityScores::from_raw(h[..n].to_vec()), &unlabeled).unwrap();
        let scaled: Vec<f64> = h[..n].iter().map(|v| v * factor).collect();
        let b = assign_pseudo_labels(&x, &cent, &HomogeneityScores::from_raw(scaled), &unlabeled).unwrap();
        prop_assert_eq!(a.labels, b.labels);
        prop_assert_eq!(a.zero_confidence, b.zero_confidence);
    });
}

#[test]
fn pseudo_labels_ignore_positive_h_scaling() {
    h_scaling_invariance();
}

fn loss_sum_identity() {
    proptest!(config(), |(seed in any::<u64>(), n in 12usize..24, epochs in 1usize..4)| {
        let arch = Architecture { d_in: 3, hidden: vec![4], embed_dim: 3, num_classes: 3 };
        let model = NetModel::new(&arch, seed).unwrap();
        let mut rng = proulearn::data::RandomSource::new(seed, 1);
        let x = FeatureMatrix::new(n, 3, (0..n * 3).map(|_| rng.standard_normal()).collect()).unwrap();
        let y = LabelVector::new((0..n).map(|i| i % 3).collect(), 3).unwrap();
        let cfg = AdaptConfig {
            epochs,
            batch_size: 5,
            trees: 4,
            k: 2,
            budget_fraction: 0.2,
            lr_backbone: 1e-3,
            seed,
            ..AdaptConfig::default()
        };
        let report = match adapt_target(&model, &x, &y, &cfg) {
            Ok((_, r)) => r,
            Err(Error::DegenerateClass { .. } | Error::Divergence(_)) => return Err(TestCaseError::reject("collapsed")),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(report.epochs.len(), epochs);
        for r in &report.epochs {
            prop_assert_eq!(r.l_total, r.l_wce + r.l_im + r.l_cc);
            prop_assert!(r.l_wce >= 0.0 && (0.0..=2.0).contains(&r.l_cc));
        }
    });
}

#[test]
fn report_losses_sum_to_total() {
    loss_sum_identity();
}

use proulearn::data::{LabelVector, Matrix, RandomSource};
use proulearn::netmodel::{
    backward_terms, loss_cc, loss_im, loss_wce, Architecture, BatchWeights, LossTerms, NetModel,
};

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;
const BATCH: usize = 8;

struct Case {
    model: NetModel,
    x: Matrix,
    labels: LabelVector,
    weights: BatchWeights,
    centroids: Matrix,
}

fn case(seed: u64) -> Case {
    let arch = Architecture {
        d_in: 6,
        hidden: if seed % 2 == 0 { vec![10] } else { vec![9, 7] },
        embed_dim: 5,
        num_classes: 4,
    };
    let model = NetModel::new(&arch, seed).unwrap();
    let mut rng = RandomSource::new(seed, 99);
    let x = Matrix::from_vec(BATCH, 6, (0..BATCH * 6).map(|_| rng.standard_normal()).collect());
    let labels = LabelVector::new((0..BATCH).map(|_| rng.below(4)).collect(), 4).unwrap();
    let weights = BatchWeights::new((0..BATCH).map(|_| rng.uniform(0.1, 2.0)).collect()).unwrap();
    let centroids = Matrix::from_vec(BATCH, 5, (0..BATCH * 5).map(|_| rng.standard_normal()).collect());
    Case {
        model,
        x,
        labels,
        weights,
        centroids,
    }
}

fn objective(c: &Case, model: &NetModel, terms: LossTerms) -> f64 {
    let (emb, logits) = model.forward_matrix(&c.x).unwrap();
    let emb = Matrix::from_vec(emb.rows(), emb.cols(), emb.as_slice().to_vec());
    let mut total = 0.0;
    if terms.wce {
        total += loss_wce(&logits, &c.labels, &c.weights);
    }
    if terms.im {
        total += loss_im(&logits);
    }
    if terms.cc {
        total += loss_cc(&emb, &c.centroids);
    }
    total
}

fn numeric_gradient(c: &Case, terms: LossTerms) -> Vec<f64> {
    let base = c.model.flatten();
    let mut probe = c.model.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + STEP;
        probe.assign_flat(&p);
        let up = objective(c, &probe, terms);
        p[i] = base[i] - STEP;
        probe.assign_flat(&p);
        let down = objective(c, &probe, terms);
        p[i] = base[i];
        out.push((up - down) / (2.0 * STEP));
    }
    out
}

/// Largest per-parameter relative error, `|a - n| / max(|a|, |n|)`, over
/// entries where either side is above round-off level.
fn worst_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs().max(n.abs()) > 1e-9)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

fn check(terms: LossTerms, name: &str) {
    for seed in 0..5 {
        let c = case(seed);
        let (breakdown, g) =
            backward_terms(&c.model, &c.x, &c.labels, &c.weights, &c.centroids, terms).unwrap();
        let analytic = g.flatten();
        let numeric = numeric_gradient(&c, terms);
        let err = worst_relative_error(&analytic, &numeric);
        assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
        let direct = objective(&c, &c.model, terms);
        assert!((breakdown.total() - direct).abs() < 1e-12, "{name} seed {seed}: loss value mismatch");
    }
}

#[test]
fn weighted_cross_entropy_gradient() {
    check(LossTerms::WCE, "wce");
}

#[test]
fn information_maximization_gradient() {
    check(LossTerms::IM, "im");
}

#[test]
fn central_correlation_gradient() {
    check(LossTerms::CC, "cc");
}

#[test]
fn total_objective_gradient() {
    check(LossTerms::ALL, "total");
}

#[test]
fn small_step_lowers_batch_loss() {
    for seed in 0..5 {
        let c = case(seed);
        let (before, g) =
            backward_terms(&c.model, &c.x, &c.labels, &c.weights, &c.centroids, LossTerms::ALL).unwrap();
        let mut moved = c.model.clone();
        let p: Vec<f64> = moved
            .flatten()
            .iter()
            .zip(g.flatten())
            .map(|(w, d)| w - 1e-4 * d)
            .collect();
        moved.assign_flat(&p);
        assert!(objective(&c, &moved, LossTerms::ALL) < before.total(), "seed {seed}");
    }
}

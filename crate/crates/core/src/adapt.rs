//! The target adaptation loop.
//!
//! Order of work: source-model embeddings, homogeneity scores, correlation
//! neighbor graph and neighbor entropy, one-shot active selection, initial
//! centroids and pseudo-labels, then epochs of mini-batch training on the
//! summed weighted cross-entropy, information maximization and central
//! correlation losses. Every `max(1, epochs / 10)` epochs the centroids and
//! pseudo-labels are recomputed from the current model; active labels never
//! change.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{baseline_select, mmd_present_classes, MmdKernel};
use crate::correlation::{knn_by_similarity, neighbor_entropy, EntropyScores, NeighborGraph, Similarity};
use crate::data::{argmax, FeatureMatrix, LabelVector, Matrix, ProbMatrix, RandomSource};
use crate::error::{Error, Result};
use crate::hpe::{build_ensemble_with_params, homogeneity_scores, DepthBase, HomogeneityScores, HpeParams};
use crate::netmodel::{backward_terms, evaluate, sgd_step, BatchWeights, LossTerms, NetModel, OptimState};
use crate::pseudolabel::{assign_pseudo_labels_with, compute_centroids, Centroids, PseudoLabelSet};
use crate::selection::{check_budget, select_active, selection_scores, ActiveSet, SelectionScores};

/// Floor on pseudo-label weights so every sample keeps a positive weight.
pub const PSEUDO_WEIGHT_FLOOR: f64 = 1e-3;

const SHUFFLE_STREAM: u64 = 0x6164_6170_7473;
const BASELINE_STREAM: u64 = 0x6261_7365;

/// How the active set is chosen. Everything else in the loop is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Hpe,
    Random,
    Entropy,
    Kmeans,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::Entropy, Strategy::Kmeans, Strategy::Hpe];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Hpe => "hpe",
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Kmeans => "kmeans",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hpe" => Ok(Strategy::Hpe),
            "random" => Ok(Strategy::Random),
            "entropy" => Ok(Strategy::Entropy),
            "kmeans" => Ok(Strategy::Kmeans),
            other => Err(Error::invalid(format!(
                "unknown strategy {other:?}; valid: random, entropy, kmeans, hpe"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub budget_fraction: f64,
    pub trees: usize,
    /// Neighbor count; 0 disables neighborhood exclusion.
    pub k: usize,
    pub subsample_size: Option<usize>,
    pub depth_base: DepthBase,
    pub seed: u64,
    pub lr_backbone: f64,
    /// Inverse decay `(1 + 10 p)^-0.75` of all rates over training progress `p`.
    pub lr_decay: bool,
    pub shuffle: bool,
    pub strategy: Strategy,
    pub metric: Similarity,
    pub ablate_cc: bool,
    pub freeze_classifier: bool,
    pub refresh_hpe: bool,
    pub mmd_kernel: MmdKernel,
    #[serde(skip)]
    pub dump_pseudo: Option<PathBuf>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            budget_fraction: 0.05,
            trees: 200,
            k: 8,
            subsample_size: None,
            depth_base: DepthBase::Subset,
            seed: 0,
            lr_backbone: 0.01,
            lr_decay: false,
            shuffle: true,
            strategy: Strategy::Hpe,
            metric: Similarity::Correlation,
            ablate_cc: false,
            freeze_classifier: false,
            refresh_hpe: false,
            mmd_kernel: MmdKernel::Linear,
            dump_pseudo: None,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        check_budget(self.budget_fraction)?;
        if self.trees == 0 {
            return Err(Error::invalid("trees must be positive"));
        }
        if self.k >= n {
            return Err(Error::invalid(format!("k={} must be below n={n}", self.k)));
        }
        if let Some(s) = self.subsample_size {
            if s == 0 || s > n {
                return Err(Error::invalid(format!("subsample_size must be in 1..={n}")));
            }
        }
        if !(self.lr_backbone > 0.0 && self.lr_backbone.is_finite()) {
            return Err(Error::invalid("lr_backbone must be positive"));
        }
        Ok(())
    }

    /// `max(1, floor(epochs / 10))`.
    pub fn refinement_period(&self) -> usize {
        (self.epochs / 10).max(1)
    }

    pub fn hpe_params(&self) -> HpeParams {
        HpeParams {
            trees: self.trees,
            subsample_size: self.subsample_size,
            depth_base: self.depth_base,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_wce: f64,
    pub l_im: f64,
    pub l_cc: f64,
    pub l_total: f64,
    pub pseudo_acc: f64,
    pub target_acc: f64,
    pub mmd: f64,
    pub refined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub config: AdaptConfig,
    pub n_target: usize,
    pub source_target_acc: f64,
    pub initial_pseudo_acc: f64,
    pub initial_mmd: f64,
    pub epochs: Vec<EpochRecord>,
    /// `(epoch, pseudo-label accuracy)` after each refinement.
    pub refinements: Vec<(usize, f64)>,
    pub active_set: ActiveSet,
    pub selection_calls: usize,
    pub zero_confidence: usize,
    pub checkpoint_path: Option<String>,
}

impl AdaptReport {
    pub fn final_target_acc(&self) -> f64 {
        self.epochs.last().map_or(self.source_target_acc, |e| e.target_acc)
    }

    pub fn final_pseudo_acc(&self) -> f64 {
        self.refinements
            .last()
            .map_or(self.initial_pseudo_acc, |r| r.1)
    }

    pub fn mmd_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mmd).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const CSV_HEADER: &'static str = "epoch,l_wce,l_im,l_cc,l_total,pseudo_acc,target_acc,mmd";

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", Self::CSV_HEADER).map_err(io)?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.l_wce, r.l_im, r.l_cc, r.l_total, r.pseudo_acc, r.target_acc, r.mmd
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Active samples weigh `1 + U_i` (in `[1, 2]`); pseudo-labeled samples weigh
/// their normalized similarity score floored at [`PSEUDO_WEIGHT_FLOOR`].
///
/// `u` and `z_norm` are indexed by sample; `z_norm` is ignored for active
/// samples.
pub fn compute_batch_weights(batch: &[usize], active_mask: &[bool], u: &[f64], z_norm: &[f64]) -> BatchWeights {
    BatchWeights {
        w: batch
            .iter()
            .map(|&i| {
                if active_mask[i] {
                    1.0 + u[i]
                } else {
                    z_norm[i].max(PSEUDO_WEIGHT_FLOOR)
                }
            })
            .collect(),
    }
}

/// Fraction of argmax predictions equal to the labels.
pub fn evaluate_accuracy(model: &NetModel, features: &FeatureMatrix, labels: &LabelVector) -> Result<f64> {
    evaluate(model, features, labels)
}

/// Everything computed from the source model before training starts.
#[derive(Debug, Clone)]
pub struct SelectionContext {
    pub embeddings: FeatureMatrix,
    pub probs: ProbMatrix,
    pub homogeneity: HomogeneityScores,
    pub graph: NeighborGraph,
    pub entropy: EntropyScores,
    pub scores: SelectionScores,
}

/// Source-model embeddings, homogeneity, neighbor graph and selection scores.
pub fn selection_context(model: &NetModel, target: &FeatureMatrix, config: &AdaptConfig) -> Result<SelectionContext> {
    let (embeddings, logits) = model.forward(target)?;
    let probs = ProbMatrix::from_logits(&logits)?;
    let ensemble = build_ensemble_with_params(&embeddings, &config.hpe_params())?;
    let homogeneity = homogeneity_scores(&ensemble, &embeddings)?;
    let graph = if config.k == 0 {
        NeighborGraph::empty(target.rows())
    } else {
        knn_by_similarity(&embeddings, config.k, config.metric)?
    };
    let entropy = neighbor_entropy(&graph, &probs)?;
    let scores = selection_scores(&homogeneity, &entropy)?;
    Ok(SelectionContext {
        embeddings,
        probs,
        homogeneity,
        graph,
        entropy,
        scores,
    })
}

/// Chooses the active set with the configured strategy.
pub fn choose_active(ctx: &SelectionContext, oracle: &LabelVector, config: &AdaptConfig) -> Result<ActiveSet> {
    match config.strategy {
        Strategy::Hpe => select_active(&ctx.scores, &ctx.graph, config.budget_fraction, oracle),
        other => baseline_select(
            other,
            &ctx.embeddings,
            &ctx.probs,
            config.budget_fraction,
            oracle,
            config.seed ^ BASELINE_STREAM,
        ),
    }
}

struct Refresh {
    embeddings: FeatureMatrix,
    probs: ProbMatrix,
    logits: Matrix,
}

fn refresh(model: &NetModel, target: &FeatureMatrix) -> Result<Refresh> {
    let (embeddings, logits) = model.forward(target)?;
    let probs = ProbMatrix::from_logits(&logits)?;
    Ok(Refresh {
        embeddings,
        probs,
        logits,
    })
}

fn accuracy_of_logits(logits: &Matrix, truth: &[usize]) -> f64 {
    let hits = logits
        .iter_rows()
        .zip(truth)
        .filter(|(z, &y)| argmax(z) == y)
        .count();
    hits as f64 / truth.len() as f64
}

/// Runs the full adaptation. Returns the adapted model and the report.
pub fn adapt_target(
    source_model: &NetModel,
    target: &FeatureMatrix,
    oracle: &LabelVector,
    config: &AdaptConfig,
) -> Result<(NetModel, AdaptReport)> {
    adapt_target_observed(source_model, target, oracle, config, &mut |_| {})
}

/// [`adapt_target`] with a callback after every epoch.
pub fn adapt_target_observed(
    source_model: &NetModel,
    target: &FeatureMatrix,
    oracle: &LabelVector,
    config: &AdaptConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(NetModel, AdaptReport)> {
    let n = target.rows();
    config.validate(n)?;
    oracle.check_len(n, "adapt oracle labels")?;
    if oracle.num_classes() != source_model.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "oracle classes vs model classes",
            expected: source_model.num_classes(),
            found: oracle.num_classes(),
        });
    }
    source_model.check_input(target.cols())?;

    let ctx = selection_context(source_model, target, config)?;
    let active = choose_active(&ctx, oracle, config)?;
    let selection_calls = 1;
    let active_mask = active.mask(n);
    let unlabeled: Vec<usize> = (0..n).filter(|&i| !active_mask[i]).collect();
    let truth = oracle.as_slice();

    let mut homogeneity = ctx.homogeneity.clone();
    let mut centroids = compute_centroids(&ctx.embeddings, &ctx.probs)?;
    let mut pseudo = assign_pseudo_labels_with(&ctx.embeddings, &centroids, &homogeneity, &unlabeled, config.metric)?;
    if let Some(p) = &config.dump_pseudo {
        if p.exists() {
            std::fs::remove_file(p).map_err(|e| Error::io(p, e))?;
        }
        pseudo.append_csv(p, 0)?;
    }
    let initial_pseudo_acc = pseudo.accuracy(truth);

    let mut train_labels = vec![0usize; n];
    let mut z_by_sample = vec![0.0; n];
    for (&i, &l) in active.indices.iter().zip(&active.labels) {
        train_labels[i] = l;
    }
    apply_pseudo(&pseudo, &mut train_labels, &mut z_by_sample);
    let active_labels_before: Vec<usize> = active.indices.iter().map(|&i| train_labels[i]).collect();

    let initial = refresh(source_model, target)?;
    let source_target_acc = accuracy_of_logits(&initial.logits, truth);
    let initial_mmd = mmd_present_classes(&initial.embeddings, &train_labels, &centroids, config.mmd_kernel)?;

    let mut model = source_model.clone();
    let mut opt = OptimState::new(&model, config.lr_backbone);
    if config.freeze_classifier {
        opt = opt.freeze_classifier();
    }
    let terms = LossTerms {
        wce: true,
        im: true,
        cc: !config.ablate_cc,
    };
    let period = config.refinement_period();
    let mut rng = RandomSource::new(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let total_steps = config.epochs * n.div_ceil(config.batch_size);
    let mut step = 0usize;
    let mut records = Vec::with_capacity(config.epochs);
    let mut refinements = Vec::new();
    let mut zero_confidence = pseudo.zero_confidence.len();
    let d = model.embed_dim();

    for epoch in 1..=config.epochs {
        if config.shuffle {
            rng.shuffle(&mut order);
        }
        let (mut s_wce, mut s_im, mut s_cc) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            if config.lr_decay {
                let p = step as f64 / total_steps as f64;
                opt.set_scale((1.0 + 10.0 * p).powf(-0.75));
            }
            let x = crate::netmodel::gather(target, batch);
            let labels = LabelVector::new(batch.iter().map(|&i| train_labels[i]).collect(), oracle.num_classes())?;
            let weights = compute_batch_weights(batch, &active_mask, &ctx.scores.u, &z_by_sample);
            let mut assigned = Matrix::zeros(batch.len(), d);
            for (r, &i) in batch.iter().enumerate() {
                assigned.row_mut(r).copy_from_slice(centroids.centroid(train_labels[i]));
            }
            let (loss, grads) = backward_terms(&model, &x, &labels, &weights, &assigned, terms)?;
            if !loss.total().is_finite() {
                return Err(Error::Divergence(format!("loss non-finite at epoch {epoch}")));
            }
            let bs = batch.len() as f64;
            s_wce += loss.wce * bs;
            s_im += loss.im * bs;
            s_cc += loss.cc * bs;
            sgd_step(&mut model, &grads, &mut opt)?;
            step += 1;
        }

        let mut state = refresh(&model, target)?;
        let refined = epoch % period == 0;
        if refined {
            if config.refresh_hpe {
                let params = HpeParams {
                    seed: config.seed.wrapping_add(epoch as u64),
                    ..config.hpe_params()
                };
                let ens = build_ensemble_with_params(&state.embeddings, &params)?;
                homogeneity = homogeneity_scores(&ens, &state.embeddings)?;
            }
            centroids = compute_centroids(&state.embeddings, &state.probs)?;
            pseudo = assign_pseudo_labels_with(&state.embeddings, &centroids, &homogeneity, &unlabeled, config.metric)?;
            zero_confidence = pseudo.zero_confidence.len();
            apply_pseudo(&pseudo, &mut train_labels, &mut z_by_sample);
            let after: Vec<usize> = active.indices.iter().map(|&i| train_labels[i]).collect();
            assert_eq!(after, active_labels_before, "active labels changed during refinement");
            if let Some(p) = &config.dump_pseudo {
                pseudo.append_csv(p, epoch)?;
            }
            refinements.push((epoch, pseudo.accuracy(truth)));
        }
        let diag_centroids = if refined {
            centroids.clone()
        } else {
            compute_centroids(&state.embeddings, &state.probs)?
        };
        let mmd = mmd_present_classes(&state.embeddings, &train_labels, &diag_centroids, config.mmd_kernel)?;
        let nf = n as f64;
        let (l_wce, l_im, l_cc) = (s_wce / nf, s_im / nf, s_cc / nf);
        let target_acc = accuracy_of_logits(&state.logits, truth);
        state.logits = Matrix::zeros(0, 0);
        records.push(EpochRecord {
            epoch,
            l_wce,
            l_im,
            l_cc,
            l_total: l_wce + l_im + l_cc,
            pseudo_acc: pseudo.accuracy(truth),
            target_acc,
            mmd,
            refined,
        });
        on_epoch(records.last().unwrap());
        log::debug!(
            "epoch {epoch}: loss {:.4} (wce {:.4} im {:.4} cc {:.4}) target acc {:.4} pseudo acc {:.4} mmd {:.5}",
            l_wce + l_im + l_cc,
            l_wce,
            l_im,
            l_cc,
            target_acc,
            pseudo.accuracy(truth),
            mmd
        );
    }

    let report = AdaptReport {
        config: config.clone(),
        n_target: n,
        source_target_acc,
        initial_pseudo_acc,
        initial_mmd,
        epochs: records,
        refinements,
        active_set: active,
        selection_calls,
        zero_confidence,
        checkpoint_path: None,
    };
    Ok((model, report))
}

fn apply_pseudo(pseudo: &PseudoLabelSet, labels: &mut [usize], z: &mut [f64]) {
    for (k, &i) in pseudo.indices.iter().enumerate() {
        labels[i] = pseudo.labels[k];
        z[i] = pseudo.z_norm[k];
    }
}

/// Current centroid matrix for a model over a target set.
pub fn current_centroids(model: &NetModel, target: &FeatureMatrix) -> Result<(FeatureMatrix, Centroids)> {
    let s = refresh(model, target)?;
    let c = compute_centroids(&s.embeddings, &s.probs)?;
    Ok((s.embeddings, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_endpoints() {
        let mask = [true, true, false, false];
        let u = [1.0, 0.0, 0.3, 0.3];
        let z = [0.0, 0.0, 0.0, 0.7];
        let w = compute_batch_weights(&[0, 1, 2, 3], &mask, &u, &z);
        assert_eq!(w.w, vec![2.0, 1.0, PSEUDO_WEIGHT_FLOOR, 0.7]);
        let min_active = w.w[..2].iter().cloned().fold(f64::INFINITY, f64::min);
        let max_pseudo = w.w[2..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min_active >= max_pseudo);
    }

    #[test]
    fn refinement_schedule() {
        let c = AdaptConfig::default();
        assert_eq!(c.refinement_period(), 3);
        let epochs: Vec<usize> = (1..=c.epochs).filter(|e| e % c.refinement_period() == 0).collect();
        assert_eq!(epochs, vec![3, 6, 9, 12, 15, 18, 21, 24, 27, 30]);
        let short = AdaptConfig {
            epochs: 4,
            ..Default::default()
        };
        assert_eq!(short.refinement_period(), 1);
    }

    #[test]
    fn defaults_follow_reported_settings() {
        let c = AdaptConfig::default();
        assert_eq!(c.epochs, 30);
        assert_eq!(c.budget_fraction, 0.05);
        assert_eq!(c.trees, 200);
        assert_eq!(c.k, 8);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("pagerank".parse::<Strategy>().is_err());
    }
}

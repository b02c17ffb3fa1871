//! Synthetic domain-shift benchmark, baseline strategies and the MMD
//! diagnostic.

mod baselines;
mod mmd;
mod synth;

pub use baselines::{baseline_select, kmeans, kmeans_select, top_entropy, KMEANS_ITERATIONS};
pub use mmd::{mmd_present_classes, mmd_to_centroids, mmd_with_kernel, MmdKernel};
pub use synth::{cluster_with_outliers, gaussian_blobs, generate_shifted_domains, ShiftedDomains, SynthSpec};

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt_target, AdaptConfig, AdaptReport, Strategy};
use crate::error::{Error, Result};
use crate::netmodel::{evaluate, pretrain_source, PretrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub pretrain: PretrainConfig,
    pub adapt: AdaptConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub ablate_cc: bool,
    pub final_accuracy: f64,
    pub initial_pseudo_acc: f64,
    pub final_pseudo_acc: f64,
    /// Share of the active set drawn from injected outliers.
    pub outlier_fraction: f64,
    pub mmd_curve: Vec<f64>,
}

impl RunSummary {
    fn from_report(report: &AdaptReport, outlier_mask: &[bool]) -> Self {
        let picks = &report.active_set.indices;
        let outliers = picks.iter().filter(|&&i| outlier_mask[i]).count();
        Self {
            strategy: report.config.strategy,
            ablate_cc: report.config.ablate_cc,
            final_accuracy: report.final_target_acc(),
            initial_pseudo_acc: report.initial_pseudo_acc,
            final_pseudo_acc: report.final_pseudo_acc(),
            outlier_fraction: if picks.is_empty() {
                0.0
            } else {
                outliers as f64 / picks.len() as f64
            },
            mmd_curve: report.mmd_curve(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// Source model on held-out source samples.
    pub source_accuracy: f64,
    /// Source model on its own training samples.
    pub source_fit: f64,
    pub source_on_target: f64,
    pub runs: Vec<RunSummary>,
    /// The hpe run repeated with the central correlation loss disabled.
    pub ablation: RunSummary,
}

impl SeedRun {
    pub fn run(&self, s: Strategy) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.strategy == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub mean_outlier_fraction: f64,
    /// Mean and sample std of `hpe - this` over paired seeds.
    pub paired_gap_mean: f64,
    pub paired_gap_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: SynthSpec,
    pub seeds: Vec<u64>,
    pub strategies: Vec<StrategySummary>,
    pub per_seed: Vec<SeedRun>,
    /// Per-epoch means over seeds.
    pub mmd_with_cc: Vec<f64>,
    pub mmd_without_cc: Vec<f64>,
    pub gap_warning: Option<String>,
}

/// `(mean, sample std)`; std is 0 for fewer than two values.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl BenchReport {
    pub fn summary(&self, s: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|x| x.strategy == s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_accuracy_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("strategy,seed,accuracy\n");
        for s in &self.strategies {
            for (seed, acc) in self.seeds.iter().zip(&s.accuracies) {
                out.push_str(&format!("{},{},{}\n", s.strategy.name(), seed, acc));
            }
        }
        write_file(path, &out)
    }

    pub fn write_mmd_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,mmd_with_cc,mmd_without_cc\n");
        for (e, (a, b)) in self.mmd_with_cc.iter().zip(&self.mmd_without_cc).enumerate() {
            out.push_str(&format!("{},{},{}\n", e + 1, a, b));
        }
        write_file(path, &out)
    }
}

fn write_file(path: &Path, s: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Work for one seed: data, source model, then one adaptation per strategy
/// plus the ablated hpe run. Runs within a seed share data and model.
pub fn run_seed(spec: &SynthSpec, strategies: &[Strategy], seed: u64, config: &BenchConfig) -> Result<SeedRun> {
    let spec = spec.with_seed(seed);
    let dom = generate_shifted_domains(&spec)?;
    let pre = PretrainConfig {
        seed,
        ..config.pretrain.clone()
    };
    let model = pretrain_source(&dom.source, &dom.source_labels, &pre)?;
    let source_fit = evaluate(&model, &dom.source, &dom.source_labels)?;
    let source_accuracy = evaluate(&model, &dom.holdout, &dom.holdout_labels)?;
    let source_on_target = evaluate(&model, &dom.target, &dom.target_labels)?;

    let mut jobs: Vec<(Strategy, bool)> = strategies.iter().map(|&s| (s, false)).collect();
    jobs.push((Strategy::Hpe, true));
    let mut results = jobs
        .par_iter()
        .map(|&(strategy, ablate_cc)| {
            let cfg = AdaptConfig {
                seed,
                strategy,
                ablate_cc,
                dump_pseudo: None,
                ..config.adapt.clone()
            };
            let (_, report) = adapt_target(&model, &dom.target, &dom.target_labels, &cfg)?;
            Ok(RunSummary::from_report(&report, &dom.outlier_mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let ablation = results.pop().expect("ablation run");
    log::info!(
        "seed {seed}: source {:.4}, source-on-target {:.4}, {}",
        source_accuracy,
        source_on_target,
        results
            .iter()
            .map(|r| format!("{} {:.4}", r.strategy.name(), r.final_accuracy))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(SeedRun {
        seed,
        source_accuracy,
        source_fit,
        source_on_target,
        runs: results,
        ablation,
    })
}

/// Paired comparison of selection strategies over seeds.
pub fn run_benchmark(
    spec: &SynthSpec,
    strategies: &[Strategy],
    seeds: &[u64],
    config: &BenchConfig,
) -> Result<BenchReport> {
    spec.validate()?;
    if seeds.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 seeds, got {}", seeds.len())));
    }
    if strategies.is_empty() {
        return Err(Error::invalid("no strategies given"));
    }
    let mut uniq = strategies.to_vec();
    uniq.sort();
    uniq.dedup();
    if uniq.len() != strategies.len() {
        return Err(Error::invalid("duplicate strategy"));
    }

    let per_seed = seeds
        .par_iter()
        .map(|&s| run_seed(spec, strategies, s, config))
        .collect::<Result<Vec<_>>>()?;

    let hpe_acc: Option<Vec<f64>> = strategies
        .contains(&Strategy::Hpe)
        .then(|| per_seed.iter().map(|r| r.run(Strategy::Hpe).unwrap().final_accuracy).collect());
    let summaries = strategies
        .iter()
        .map(|&s| {
            let acc: Vec<f64> = per_seed.iter().map(|r| r.run(s).unwrap().final_accuracy).collect();
            let out: Vec<f64> = per_seed.iter().map(|r| r.run(s).unwrap().outlier_fraction).collect();
            let (mean, std) = mean_std(&acc);
            let (paired_gap_mean, paired_gap_std) = match &hpe_acc {
                Some(h) => mean_std(&h.iter().zip(&acc).map(|(a, b)| a - b).collect::<Vec<_>>()),
                None => (0.0, 0.0),
            };
            StrategySummary {
                strategy: s,
                accuracies: acc,
                mean,
                std,
                mean_outlier_fraction: mean_std(&out).0,
                paired_gap_mean,
                paired_gap_std,
            }
        })
        .collect();

    let curve_mean = |pick: &dyn Fn(&SeedRun) -> &[f64]| -> Vec<f64> {
        let len = pick(&per_seed[0]).len();
        (0..len)
            .map(|e| per_seed.iter().map(|r| pick(r)[e]).sum::<f64>() / per_seed.len() as f64)
            .collect()
    };
    let with_cc_run = |r: &SeedRun| -> Vec<f64> {
        r.run(Strategy::Hpe)
            .map(|x| x.mmd_curve.clone())
            .unwrap_or_else(|| r.runs[0].mmd_curve.clone())
    };
    let with_cc: Vec<Vec<f64>> = per_seed.iter().map(with_cc_run).collect();
    let mmd_with_cc = {
        let len = with_cc[0].len();
        (0..len)
            .map(|e| with_cc.iter().map(|c| c[e]).sum::<f64>() / with_cc.len() as f64)
            .collect()
    };
    let mmd_without_cc = curve_mean(&|r: &SeedRun| r.ablation.mmd_curve.as_slice());

    let src = mean_std(&per_seed.iter().map(|r| r.source_accuracy).collect::<Vec<_>>()).0;
    let tgt = mean_std(&per_seed.iter().map(|r| r.source_on_target).collect::<Vec<_>>()).0;
    let gap_warning = (tgt >= src - 0.01).then(|| {
        format!("no domain gap detected: source model scores {src:.4} on source and {tgt:.4} on target")
    });
    if let Some(w) = &gap_warning {
        log::warn!("{w}");
    }

    Ok(BenchReport {
        spec: spec.clone(),
        seeds: seeds.to_vec(),
        strategies: summaries,
        per_seed,
        mmd_with_cc,
        mmd_without_cc,
        gap_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_small_cases() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn needs_three_seeds() {
        let e = run_benchmark(&SynthSpec::standard(0), &[Strategy::Random], &[1, 2], &BenchConfig::default());
        assert!(matches!(e, Err(Error::InvalidArgument(_))));
    }
}

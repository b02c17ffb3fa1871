use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use proulearn::adapt::{adapt_target_observed, choose_active, selection_context, AdaptConfig, Strategy};
use proulearn::bench::{
    generate_shifted_domains, mmd_with_kernel, run_benchmark, BenchConfig, MmdKernel, SynthSpec,
};
use proulearn::data::{
    load_features, load_labels, save_features, save_labels, FeatureMatrix, FileFormat, LabelVector, ProbMatrix,
    ReadOptions,
};
use proulearn::netmodel::{evaluate, load_checkpoint, pretrain_source, save_checkpoint, NetModel, PretrainConfig};
use proulearn::pseudolabel::compute_centroids;
use proulearn::{Error, Result};

use crate::args::{
    AdaptArgs, BenchArgs, GlobalArgs, MmdArgs, PretrainArgs, SelectArgs, SelectionFlags, SynthGenArgs, TrainingFlags,
};

type Cmd = Result<()>;

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Defaults, overlaid by the config file when given.
fn overlay<T: DeserializeOwned + Default>(global: &GlobalArgs) -> Result<T> {
    match &global.config {
        None => Ok(T::default()),
        Some(p) => read_json(p),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(value: serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{value}");
}

fn format_of(global: &GlobalArgs, path: &Path) -> FileFormat {
    global.format.unwrap_or_else(|| FileFormat::from_path(path))
}

fn read_opts(global: &GlobalArgs, num_classes: Option<usize>) -> ReadOptions {
    ReadOptions {
        csv_header: global.csv_header,
        num_classes,
    }
}

fn features(global: &GlobalArgs, path: &Path) -> Result<FeatureMatrix> {
    load_features(path, format_of(global, path), read_opts(global, None))
}

fn labels(global: &GlobalArgs, path: &Path, num_classes: Option<usize>) -> Result<LabelVector> {
    load_labels(path, format_of(global, path), read_opts(global, num_classes))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn pretrain(global: &GlobalArgs, a: &PretrainArgs) -> Cmd {
    let mut cfg: PretrainConfig = overlay(global)?;
    if let Some(v) = global.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.label_smoothing {
        cfg.label_smoothing = v;
    }
    if let Some(v) = &a.hidden {
        cfg.hidden = v.clone();
    }
    if let Some(v) = a.embed_dim {
        cfg.embed_dim = v;
    }
    cfg.validate()?;

    let x = features(global, &a.features)?;
    let y = labels(global, &a.labels, None)?;
    let model = pretrain_source(&x, &y, &cfg)?;
    let acc = evaluate(&model, &x, &y)?;
    save_checkpoint(&model, &a.out_model)?;
    emit(json!({
        "command": "pretrain",
        "train_accuracy": acc,
        "samples": x.rows(),
        "classes": y.num_classes(),
        "parameters": model.param_count(),
        "model": a.out_model,
        "config": cfg,
    }));
    Ok(())
}

fn apply_selection(cfg: &mut AdaptConfig, s: &SelectionFlags) {
    if let Some(v) = s.budget {
        cfg.budget_fraction = v;
    }
    if let Some(v) = s.k {
        cfg.k = v;
    }
    if let Some(v) = s.trees {
        cfg.trees = v;
    }
    if s.subsample.is_some() {
        cfg.subsample_size = s.subsample;
    }
    if let Some(v) = s.depth_base {
        cfg.depth_base = v;
    }
    if let Some(v) = s.metric {
        cfg.metric = v;
    }
    if let Some(v) = s.strategy {
        cfg.strategy = v;
    }
}

fn apply_training(cfg: &mut AdaptConfig, t: &TrainingFlags) {
    if let Some(v) = t.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = t.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = t.lr {
        cfg.lr_backbone = v;
    }
    if let Some(v) = t.mmd_kernel {
        cfg.mmd_kernel = v;
    }
    cfg.lr_decay |= t.lr_decay;
    cfg.shuffle &= !t.no_shuffle;
    cfg.ablate_cc |= t.ablate_cc;
    cfg.freeze_classifier |= t.freeze_classifier;
    cfg.refresh_hpe |= t.refresh_hpe;
}

/// Checks that do not need the data.
fn precheck(cfg: &AdaptConfig) -> Result<()> {
    if !(cfg.budget_fraction > 0.0 && cfg.budget_fraction <= 1.0) {
        return Err(bad(format!("--budget must be in (0, 1], got {}", cfg.budget_fraction)));
    }
    if cfg.trees == 0 {
        return Err(bad("--trees must be positive"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(bad("--epochs and --batch-size must be positive"));
    }
    if !(cfg.lr_backbone > 0.0 && cfg.lr_backbone.is_finite()) {
        return Err(bad("--lr must be positive"));
    }
    Ok(())
}

fn load_target(global: &GlobalArgs, model: &Path, x: &Path, y: &Path) -> Result<(NetModel, FeatureMatrix, LabelVector)> {
    let model = load_checkpoint(model)?;
    let x = features(global, x)?;
    let y = labels(global, y, Some(model.num_classes()))?;
    if x.cols() != model.d_in() {
        return Err(Error::DimensionMismatch {
            context: "target features vs model input",
            expected: model.d_in(),
            found: x.cols(),
        });
    }
    y.check_len(x.rows(), "labels vs feature rows")?;
    Ok((model, x, y))
}

pub fn select(global: &GlobalArgs, a: &SelectArgs) -> Cmd {
    let mut cfg: AdaptConfig = overlay(global)?;
    if let Some(v) = global.seed {
        cfg.seed = v;
    }
    apply_selection(&mut cfg, &a.selection);
    precheck(&cfg)?;
    let (model, x, oracle) = load_target(global, &a.model, &a.features, &a.labels_oracle)?;
    cfg.validate(x.rows())?;

    let ctx = selection_context(&model, &x, &cfg)?;
    let active = choose_active(&ctx, &oracle, &cfg)?;
    write_text(&a.out, &active.to_json()?)?;
    if let Some(p) = &a.dump_knn {
        ctx.graph.write_csv(p)?;
    }
    if let Some(p) = &a.dump_scores {
        let mut s = String::from("sample_index,h_raw,h_norm,e_raw,e_norm,u\n");
        for i in 0..x.rows() {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i,
                ctx.homogeneity.raw[i],
                ctx.homogeneity.normalized[i],
                ctx.entropy.raw[i],
                ctx.entropy.normalized[i],
                ctx.scores.u[i]
            ));
        }
        write_text(p, &s)?;
    }
    if let Some(w) = &active.warning {
        log::warn!("{w}");
    }
    emit(json!({
        "command": "select",
        "n": x.rows(),
        "selected": active.len(),
        "budget": cfg.budget_fraction,
        "trees": cfg.trees,
        "k": cfg.k,
        "metric": cfg.metric.name(),
        "strategy": cfg.strategy.name(),
        "seed": cfg.seed,
        "warning": active.warning,
        "out": a.out,
    }));
    Ok(())
}

pub fn adapt(global: &GlobalArgs, a: &AdaptArgs) -> Cmd {
    let mut cfg: AdaptConfig = overlay(global)?;
    if let Some(v) = global.seed {
        cfg.seed = v;
    }
    apply_selection(&mut cfg, &a.selection);
    apply_training(&mut cfg, &a.training);
    cfg.dump_pseudo = a.dump_pseudo.clone();
    precheck(&cfg)?;
    let (model, x, oracle) = load_target(global, &a.model, &a.features, &a.labels_oracle)?;
    cfg.validate(x.rows())?;

    let (adapted, mut report) = adapt_target_observed(&model, &x, &oracle, &cfg, &mut |r| {
        emit(json!({ "event": "epoch", "record": r }));
    })?;
    save_checkpoint(&adapted, &a.out_model)?;
    report.checkpoint_path = Some(a.out_model.display().to_string());
    let report_path = a.report.clone().unwrap_or_else(|| sibling(&a.out_model, ".report.json"));
    let csv_path = a.epochs_csv.clone().unwrap_or_else(|| sibling(&a.out_model, ".epochs.csv"));
    write_text(&report_path, &report.to_json()?)?;
    report.write_csv(&csv_path)?;
    emit(json!({
        "command": "adapt",
        "source_target_accuracy": report.source_target_acc,
        "final_target_accuracy": report.final_target_acc(),
        "initial_pseudo_accuracy": report.initial_pseudo_acc,
        "final_pseudo_accuracy": report.final_pseudo_acc(),
        "selected": report.active_set.len(),
        "epochs": cfg.epochs,
        "refinements": report.refinements.len(),
        "model": a.out_model,
        "report": report_path,
        "epochs_csv": csv_path,
    }));
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct BenchFile {
    spec: SynthSpec,
    pretrain: PretrainConfig,
    adapt: AdaptConfig,
    strategies: Vec<Strategy>,
    seeds: usize,
}

impl Default for BenchFile {
    fn default() -> Self {
        let c = BenchConfig::default();
        Self {
            spec: SynthSpec::standard(0),
            pretrain: c.pretrain,
            adapt: c.adapt,
            strategies: Strategy::ALL.to_vec(),
            seeds: 10,
        }
    }
}

pub fn bench(global: &GlobalArgs, a: &BenchArgs) -> Cmd {
    let mut file: BenchFile = overlay(global)?;
    if let Some(p) = &a.spec {
        file.spec = read_json(p)?;
    }
    if let Some(v) = &a.strategies {
        file.strategies = v.clone();
    }
    if let Some(v) = a.seeds {
        file.seeds = v;
    }
    if let Some(v) = a.pretrain_epochs {
        file.pretrain.epochs = v;
    }
    apply_selection(&mut file.adapt, &a.selection);
    apply_training(&mut file.adapt, &a.training);
    precheck(&file.adapt)?;
    file.spec.validate()?;
    file.pretrain.validate()?;
    file.adapt.validate(file.spec.target_len())?;
    if file.seeds < 3 {
        return Err(bad(format!("--seeds must be at least 3, got {}", file.seeds)));
    }
    let first = global.seed.unwrap_or(0);
    let seeds: Vec<u64> = (0..file.seeds as u64).map(|i| first + i).collect();
    create_dir(&a.out_dir)?;

    let config = BenchConfig {
        pretrain: file.pretrain.clone(),
        adapt: file.adapt.clone(),
    };
    let report = run_benchmark(&file.spec, &file.strategies, &seeds, &config)?;
    write_text(&a.out_dir.join("bench_report.json"), &report.to_json()?)?;
    report.write_accuracy_csv(&a.out_dir.join("accuracy.csv"))?;
    report.write_mmd_csv(&a.out_dir.join("mmd.csv"))?;
    for s in &report.strategies {
        emit(json!({
            "event": "strategy",
            "strategy": s.strategy.name(),
            "mean_accuracy": s.mean,
            "std_accuracy": s.std,
            "hpe_gap_mean": s.paired_gap_mean,
            "hpe_gap_std": s.paired_gap_std,
            "outlier_fraction": s.mean_outlier_fraction,
        }));
    }
    emit(json!({
        "command": "bench",
        "seeds": seeds,
        "strategies": file.strategies.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "gap_warning": report.gap_warning,
        "out_dir": a.out_dir,
    }));
    Ok(())
}

pub fn mmd(global: &GlobalArgs, a: &MmdArgs) -> Cmd {
    #[derive(Default, Deserialize)]
    #[serde(default)]
    struct MmdFile {
        mmd_kernel: MmdKernel,
    }
    let file: MmdFile = overlay(global)?;
    let kernel = a.mmd_kernel.unwrap_or(file.mmd_kernel);
    let (model, x, y) = load_target(global, &a.model, &a.features, &a.labels)?;
    let (emb, logits) = model.forward(&x)?;
    let probs = ProbMatrix::from_logits(&logits)?;
    let centroids = compute_centroids(&emb, &probs)?;
    let value = mmd_with_kernel(&emb, y.as_slice(), &centroids, kernel)?;
    emit(json!({
        "command": "mmd",
        "mmd": value,
        "kernel": kernel,
        "samples": x.rows(),
    }));
    Ok(())
}

pub fn synth_gen(global: &GlobalArgs, a: &SynthGenArgs) -> Cmd {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => overlay(global)?,
    };
    if a.null_shift {
        spec = SynthSpec::null_shift(spec.seed);
    }
    if let Some(v) = global.seed {
        spec.seed = v;
    }
    if let Some(v) = a.classes {
        spec.num_classes = v;
    }
    if let Some(v) = a.dim {
        spec.dim = v;
    }
    if let Some(v) = a.source_per_class {
        spec.source_per_class = v;
    }
    if let Some(v) = a.target_per_class {
        spec.target_per_class = v;
    }
    if let Some(v) = a.rotation {
        spec.rotation_deg = v;
    }
    if let Some(v) = a.translation {
        spec.translation = v;
    }
    if let Some(v) = a.noise {
        spec.noise_sigma = v;
    }
    if let Some(v) = a.outlier_fraction {
        spec.outlier_fraction = v;
    }
    spec.validate()?;
    let dom = generate_shifted_domains(&spec)?;
    create_dir(&a.out_dir)?;
    let format = global.format.unwrap_or_default();
    let ext = match format {
        FileFormat::Binary => "bin",
        FileFormat::Csv => "csv",
    };
    let path = |name: &str| a.out_dir.join(format!("{name}.{ext}"));
    save_features(&dom.source, &path("source_features"), format)?;
    save_labels(&dom.source_labels, &path("source_labels"), format)?;
    save_features(&dom.target, &path("target_features"), format)?;
    save_labels(&dom.target_labels, &path("target_labels"), format)?;
    let mask: String = dom.outlier_mask.iter().map(|&b| if b { "1\n" } else { "0\n" }).collect();
    write_text(&a.out_dir.join("outlier_mask.csv"), &mask)?;
    write_text(&a.out_dir.join("spec.json"), &serde_json::to_string_pretty(&spec)?)?;
    emit(json!({
        "command": "synth-gen",
        "source_rows": dom.source.rows(),
        "target_rows": dom.target.rows(),
        "outliers": dom.outlier_indices().len(),
        "well_separated": dom.well_separated,
        "format": format,
        "out_dir": a.out_dir,
    }));
    Ok(())
}

//! Gaussian-blob source and target domains related by an affine shift.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, LabelVector, RandomSource};
use crate::error::{Error, Result};

const MEANS_STREAM: u64 = 0x7379_6e74_0001;
const SOURCE_STREAM: u64 = 0x7379_6e74_0002;
const TARGET_STREAM: u64 = 0x7379_6e74_0003;
const OUTLIER_STREAM: u64 = 0x7379_6e74_0004;
const SHIFT_STREAM: u64 = 0x7379_6e74_0005;
const HOLDOUT_STREAM: u64 = 0x7379_6e74_0006;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub source_per_class: usize,
    pub target_per_class: usize,
    /// Applied in every consecutive coordinate plane `(0,1), (2,3), ...`.
    pub rotation_deg: f64,
    /// Length of the translation vector; its direction is drawn from the seed.
    pub translation: f64,
    /// Per-dimension target scale; empty means no scaling.
    pub scale: Vec<f64>,
    /// Extra isotropic jitter on target samples.
    pub noise_sigma: f64,
    /// Share of target rows replaced by uniform-box outliers.
    pub outlier_fraction: f64,
    /// Within-class standard deviation of the blobs.
    pub cluster_std: f64,
    /// Standard deviation of the class-mean draws.
    pub mean_spread: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::standard(0)
    }
}

impl SynthSpec {
    /// Five classes in 16 dimensions, 30 degree rotation, translation 2.0,
    /// noise 0.5, 5% outliers, 200 samples per class in each domain.
    pub fn standard(seed: u64) -> Self {
        Self {
            num_classes: 5,
            dim: 16,
            source_per_class: 200,
            target_per_class: 200,
            rotation_deg: 30.0,
            translation: 2.0,
            scale: Vec::new(),
            noise_sigma: 0.5,
            outlier_fraction: 0.05,
            cluster_std: 1.0,
            mean_spread: 1.0,
            seed,
        }
    }

    /// Same blobs, no shift, no jitter, no outliers.
    pub fn null_shift(seed: u64) -> Self {
        Self {
            rotation_deg: 0.0,
            translation: 0.0,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            ..Self::standard(seed)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn target_len(&self) -> usize {
        self.num_classes * self.target_per_class
    }

    pub fn outlier_count(&self) -> usize {
        (self.outlier_fraction * self.target_len() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim must be at least 2"));
        }
        if self.source_per_class == 0 || self.target_per_class == 0 {
            return Err(Error::invalid("samples per class must be positive"));
        }
        if !(0.0..=0.2).contains(&self.outlier_fraction) {
            return Err(Error::invalid(format!(
                "outlier_fraction must be in [0, 0.2], got {}",
                self.outlier_fraction
            )));
        }
        if !self.scale.is_empty() && self.scale.len() != self.dim {
            return Err(Error::invalid(format!(
                "scale has {} entries for dim {}",
                self.scale.len(),
                self.dim
            )));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(finite_nonneg(self.noise_sigma) && finite_nonneg(self.translation) && self.rotation_deg.is_finite()) {
            return Err(Error::invalid("shift parameters must be finite and non-negative"));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::invalid("cluster_std must be positive"));
        }
        if !(self.mean_spread > 0.0 && self.mean_spread.is_finite()) {
            return Err(Error::invalid("mean_spread must be positive"));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("scale entries must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedDomains {
    pub source: FeatureMatrix,
    pub source_labels: LabelVector,
    /// Fresh source-distribution draw of the same size, never trained on.
    pub holdout: FeatureMatrix,
    pub holdout_labels: LabelVector,
    pub target: FeatureMatrix,
    pub target_labels: LabelVector,
    pub outlier_mask: Vec<bool>,
    /// Source-space class means.
    pub class_means: Vec<Vec<f64>>,
    /// Class means pairwise at least `4 * noise_sigma` apart.
    pub well_separated: bool,
}

impl ShiftedDomains {
    pub fn outlier_indices(&self) -> Vec<usize> {
        (0..self.outlier_mask.len()).filter(|&i| self.outlier_mask[i]).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Affine {
    cos: f64,
    sin: f64,
    scale: Vec<f64>,
    offset: Vec<f64>,
}

impl Affine {
    fn apply(&self, x: &mut [f64]) {
        for pair in x.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = self.cos * a - self.sin * b;
            pair[1] = self.sin * a + self.cos * b;
        }
        for (i, v) in x.iter_mut().enumerate() {
            *v = *v * self.scale[i] + self.offset[i];
        }
    }
}

pub fn generate_shifted_domains(spec: &SynthSpec) -> Result<ShiftedDomains> {
    spec.validate()?;
    let (m, d) = (spec.num_classes, spec.dim);
    let mut rng = RandomSource::new(spec.seed, MEANS_STREAM);
    let means: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| spec.mean_spread * rng.standard_normal()).collect())
        .collect();
    let min_sep = (0..m)
        .flat_map(|a| (a + 1..m).map(move |b| (a, b)))
        .map(|(a, b)| sq_dist(&means[a], &means[b]).sqrt())
        .fold(f64::INFINITY, f64::min);
    let well_separated = min_sep >= 4.0 * spec.noise_sigma;

    let mut rng = RandomSource::new(spec.seed, SOURCE_STREAM);
    let (source, source_labels) = blobs(&means, spec.source_per_class, spec.cluster_std, &mut rng)?;
    let mut rng = RandomSource::new(spec.seed, HOLDOUT_STREAM);
    let (holdout, holdout_labels) = blobs(&means, spec.source_per_class, spec.cluster_std, &mut rng)?;

    let mut rng = RandomSource::new(spec.seed, SHIFT_STREAM);
    let mut dir: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    dir.iter_mut().for_each(|v| *v *= spec.translation / norm);
    let theta = spec.rotation_deg.to_radians();
    let affine = Affine {
        cos: theta.cos(),
        sin: theta.sin(),
        scale: if spec.scale.is_empty() {
            vec![1.0; d]
        } else {
            spec.scale.clone()
        },
        offset: dir,
    };

    let mut rng = RandomSource::new(spec.seed, TARGET_STREAM);
    let n = spec.target_len();
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..spec.target_per_class {
            let mut x: Vec<f64> = mean.iter().map(|&mu| mu + spec.cluster_std * rng.standard_normal()).collect();
            affine.apply(&mut x);
            for v in &mut x {
                *v += spec.noise_sigma * rng.standard_normal();
            }
            values.extend_from_slice(&x);
            labels.push(c);
        }
    }

    let shifted_means: Vec<Vec<f64>> = means
        .iter()
        .map(|mu| {
            let mut x = mu.clone();
            affine.apply(&mut x);
            x
        })
        .collect();
    let mut outlier_mask = vec![false; n];
    let n_out = spec.outlier_count();
    if n_out > 0 {
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in values.chunks_exact(d) {
            for j in 0..d {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        let mut rng = RandomSource::new(spec.seed, OUTLIER_STREAM);
        let mut picks = rng.sample_without_replacement(n, n_out);
        picks.sort_unstable();
        for i in picks {
            let x: Vec<f64> = (0..d).map(|j| rng.uniform(lo[j], hi[j])).collect();
            let nearest = (0..m)
                .min_by(|&a, &b| {
                    sq_dist(&x, &shifted_means[a])
                        .partial_cmp(&sq_dist(&x, &shifted_means[b]))
                        .unwrap()
                })
                .unwrap();
            values[i * d..(i + 1) * d].copy_from_slice(&x);
            labels[i] = nearest;
            outlier_mask[i] = true;
        }
    }

    Ok(ShiftedDomains {
        source,
        source_labels,
        holdout,
        holdout_labels,
        target: FeatureMatrix::new(n, d, values)?,
        target_labels: LabelVector::new(labels, m)?,
        outlier_mask,
        class_means: means,
        well_separated,
    })
}

fn blobs(
    means: &[Vec<f64>],
    per_class: usize,
    std: f64,
    rng: &mut RandomSource,
) -> Result<(FeatureMatrix, LabelVector)> {
    let d = means[0].len();
    let mut values = Vec::with_capacity(means.len() * per_class * d);
    let mut labels = Vec::with_capacity(means.len() * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            values.extend(mean.iter().map(|&mu| mu + std * rng.standard_normal()));
            labels.push(c);
        }
    }
    Ok((
        FeatureMatrix::new(labels.len(), d, values)?,
        LabelVector::new(labels, means.len())?,
    ))
}

/// Gaussian blobs without any shift, for unit-scale experiments.
pub fn gaussian_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<(FeatureMatrix, LabelVector)> {
    if num_classes < 1 || dim < 2 || per_class < 1 {
        return Err(Error::invalid("blob generator needs classes, dim >= 2 and samples"));
    }
    let mut rng = RandomSource::new(seed, MEANS_STREAM);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| spread * rng.standard_normal()).collect())
        .collect();
    let mut rng = RandomSource::new(seed, SOURCE_STREAM);
    blobs(&means, per_class, 1.0, &mut rng)
}

/// One standard Gaussian cluster with `n_outliers` uniform points from the
/// box `[-10, 10]^dim` kept at distance at least 6 from the origin. Outliers
/// occupy the last rows.
pub fn cluster_with_outliers(n_cluster: usize, n_outliers: usize, dim: usize, seed: u64) -> Result<FeatureMatrix> {
    if n_cluster + n_outliers < 1 || dim < 2 {
        return Err(Error::invalid("cluster_with_outliers needs points and dim >= 2"));
    }
    let mut rng = RandomSource::new(seed, SOURCE_STREAM);
    let mut values = Vec::with_capacity((n_cluster + n_outliers) * dim);
    for _ in 0..n_cluster * dim {
        values.push(rng.standard_normal());
    }
    let mut rng = RandomSource::new(seed, OUTLIER_STREAM);
    let mut placed = 0;
    while placed < n_outliers {
        let x: Vec<f64> = (0..dim).map(|_| rng.uniform(-10.0, 10.0)).collect();
        if x.iter().map(|v| v * v).sum::<f64>() >= 36.0 {
            values.extend_from_slice(&x);
            placed += 1;
        }
    }
    FeatureMatrix::new(n_cluster + n_outliers, dim, values)
}

use serde::{Deserialize, Serialize};

use super::backward::backprop;
use super::loss::{smoothed_targets, soft_ce_with_grad};
use super::{sgd_step, Architecture, NetModel, OptimState};
use crate::data::{FeatureMatrix, LabelVector, Matrix, RandomSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            embed_dim: 16,
            epochs: 100,
            batch_size: 64,
            lr: 0.01,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn architecture(&self, d_in: usize, num_classes: usize) -> Architecture {
        Architecture {
            d_in,
            hidden: self.hidden.clone(),
            embed_dim: self.embed_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label smoothing must be in [0, 1)"));
        }
        Ok(())
    }
}

const INIT_STREAM: u64 = 0x7072_6574;
const SHUFFLE_STREAM: u64 = 0x7368_7566;

/// Supervised source training with label-smoothed cross-entropy and
/// mini-batch momentum SGD. Deterministic for a given seed.
pub fn pretrain_source(
    features: &FeatureMatrix,
    labels: &LabelVector,
    config: &PretrainConfig,
) -> Result<NetModel> {
    config.validate()?;
    labels.check_len(features.rows(), "pretrain labels")?;
    let arch = config.architecture(features.cols(), labels.num_classes());
    let mut model = NetModel::new(&arch, config.seed ^ INIT_STREAM)?;
    let mut opt = OptimState::new(&model, config.lr);
    let mut rng = RandomSource::new(config.seed, SHUFFLE_STREAM);
    let n = features.rows();
    let m = labels.num_classes();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = gather(features, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels.get(i)).collect();
            let cache = model.forward_cached(&x)?;
            let targets = smoothed_targets(&y, m, config.label_smoothing);
            let (loss, dlogits) = soft_ce_with_grad(&cache.logits, &targets, &vec![1.0; chunk.len()]);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("source loss non-finite at epoch {epoch}")));
            }
            epoch_loss += loss * chunk.len() as f64;
            let grads = backprop(&model, &cache, &dlogits, Matrix::zeros(chunk.len(), arch.embed_dim));
            sgd_step(&mut model, &grads, &mut opt)?;
        }
        log::debug!("pretrain epoch {epoch}: loss {:.5}", epoch_loss / n as f64);
    }
    Ok(model)
}

pub(crate) fn gather(features: &FeatureMatrix, idx: &[usize]) -> Matrix {
    let d = features.cols();
    let mut v = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        v.extend_from_slice(features.row(i));
    }
    Matrix::from_vec(idx.len(), d, v)
}

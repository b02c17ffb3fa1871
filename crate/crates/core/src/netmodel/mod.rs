//! Small feedforward classifier (backbone -> bottleneck -> classifier) with
//! hand-written gradients for the three adaptation losses.
//!
//! The backbone is one or more affine layers each followed by `tanh`. The
//! bottleneck is affine and its output is the embedding space in which
//! correlations, centroids and homogeneity are computed. The classifier maps
//! embeddings to logits.

mod backward;
mod checkpoint;
mod loss;
mod optim;
mod pretrain;

pub use backward::{backward, backward_terms, Gradients, LossTerms};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{
    loss_cc, loss_im, loss_smoothed_ce, loss_wce, total_loss, BatchWeights, LossBreakdown, LOSS_EPS,
};
pub use optim::{sgd_step, OptimState, ParamGroup, BOTTLENECK_LR_FACTOR, MOMENTUM};
pub use pretrain::{pretrain_source, PretrainConfig};
pub(crate) use pretrain::gather;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Matrix, RandomSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Layer sizes. Defaults to `d_in -> 32 -> 16 -> M`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub d_in: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(d_in: usize, num_classes: usize) -> Self {
        Self {
            d_in,
            hidden: vec![32],
            embed_dim: 16,
            num_classes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.num_classes < 2 {
            return Err(Error::invalid("architecture needs d_in >= 1 and at least 2 classes"));
        }
        if self.embed_dim < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        if self.hidden.is_empty() || self.hidden.len() > 2 || self.hidden.contains(&0) {
            return Err(Error::invalid("backbone must have one or two non-empty hidden layers"));
        }
        Ok(())
    }
}

/// Affine layer, `out = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(inputs: usize, outputs: usize, rng: &mut RandomSource) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.uniform(-a, a)).collect();
        Self {
            weights: Matrix::from_vec(outputs, inputs, w),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn apply(&self, input: &Matrix) -> Matrix {
        let (n, out) = (input.rows(), self.outputs());
        let mut res = Matrix::zeros(n, out);
        for r in 0..n {
            let x = input.row(r);
            let y = res.row_mut(r);
            for (o, yo) in y.iter_mut().enumerate() {
                let w = self.weights.row(o);
                let mut acc = self.bias[o];
                for (wi, xi) in w.iter().zip(x) {
                    acc += wi * xi;
                }
                *yo = acc;
            }
        }
        res
    }

    fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    fn is_finite(&self) -> bool {
        self.weights.as_slice().iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetModel {
    /// Backbone layers, then the bottleneck, then the classifier.
    pub(crate) layers: Vec<Dense>,
    pub(crate) activation: Activation,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; the last backbone output is
    /// the bottleneck input.
    pub(crate) inputs: Vec<Matrix>,
    pub embeddings: Matrix,
    pub logits: Matrix,
}

impl NetModel {
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = RandomSource::new(seed, 0x6e65_745f_696e_6974);
        let mut layers = Vec::new();
        let mut prev = arch.d_in;
        for &h in &arch.hidden {
            layers.push(Dense::glorot(prev, h, &mut rng));
            prev = h;
        }
        layers.push(Dense::glorot(prev, arch.embed_dim, &mut rng));
        layers.push(Dense::glorot(arch.embed_dim, arch.num_classes, &mut rng));
        Ok(Self {
            layers,
            activation: Activation::Tanh,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.len() < 3 {
            return Err(Error::invalid("model needs a backbone, a bottleneck and a classifier"));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::DimensionMismatch {
                    context: "consecutive layer sizes",
                    expected: w[0].outputs(),
                    found: w[1].inputs(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::DimensionMismatch {
                    context: "layer bias length",
                    expected: l.outputs(),
                    found: l.bias.len(),
                });
            }
        }
        let m = Self { layers, activation };
        if m.embed_dim() < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        Ok(m)
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[self.layers.len() - 2].outputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn backbone_depth(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn group_of(&self, layer: usize) -> ParamGroup {
        let b = self.backbone_depth();
        if layer < b {
            ParamGroup::Backbone
        } else if layer == b {
            ParamGroup::Bottleneck
        } else {
            ParamGroup::Classifier
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn assign_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count());
        let mut pos = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&values[pos..pos + w.len()]);
            pos += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[pos..pos + nb]);
            pos += nb;
        }
    }

    pub(crate) fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.d_in() {
            return Err(Error::DimensionMismatch {
                context: "model input dimension",
                expected: self.d_in(),
                found: cols,
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x.cols())?;
        let b = self.backbone_depth();
        let mut inputs = Vec::with_capacity(b + 1);
        let mut cur = x.clone();
        for layer in &self.layers[..b] {
            let mut z = layer.apply(&cur);
            z.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            inputs.push(cur);
            cur = z;
        }
        let embeddings = self.layers[b].apply(&cur);
        inputs.push(cur);
        let logits = self.layers[b + 1].apply(&embeddings);
        Ok(ForwardCache {
            inputs,
            embeddings,
            logits,
        })
    }

    /// Embeddings (`n x D`) and logits (`n x M`) for a batch.
    pub fn forward(&self, x: &FeatureMatrix) -> Result<(FeatureMatrix, Matrix)> {
        self.forward_matrix(&Matrix::from_vec(x.rows(), x.cols(), x.as_slice().to_vec()))
    }

    pub fn forward_matrix(&self, x: &Matrix) -> Result<(FeatureMatrix, Matrix)> {
        let cache = self.forward_cached(x)?;
        let emb = FeatureMatrix::try_from(cache.embeddings)
            .map_err(|e| Error::Divergence(format!("embeddings: {e}")))?;
        Ok((emb, cache.logits))
    }
}

/// Top-1 accuracy of `model` on `(features, labels)`, ties to the lowest class.
pub fn evaluate(model: &NetModel, features: &FeatureMatrix, labels: &crate::data::LabelVector) -> Result<f64> {
    labels.check_len(features.rows(), "evaluate labels")?;
    let (_, logits) = model.forward(features)?;
    let hits = logits
        .iter_rows()
        .zip(labels.as_slice())
        .filter(|(z, &y)| crate::data::argmax(z) == y)
        .count();
    Ok(hits as f64 / features.rows() as f64)
}

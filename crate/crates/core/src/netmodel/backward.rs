use super::loss::{cc_with_grad, im_with_grad, one_hot, soft_ce_with_grad};
use super::{BatchWeights, Dense, ForwardCache, LossBreakdown, NetModel};
use crate::data::{LabelVector, Matrix};
use crate::error::{Error, Result};

/// Which loss terms contribute to the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub wce: bool,
    pub im: bool,
    pub cc: bool,
}

impl LossTerms {
    pub const ALL: Self = Self {
        wce: true,
        im: true,
        cc: true,
    };
    pub const WCE: Self = Self {
        wce: true,
        im: false,
        cc: false,
    };
    pub const IM: Self = Self {
        wce: false,
        im: true,
        cc: false,
    };
    pub const CC: Self = Self {
        wce: false,
        im: false,
        cc: true,
    };
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &NetModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Gradient of the full objective (all three terms). Centroids are constants.
pub fn backward(
    model: &NetModel,
    batch: &Matrix,
    labels: &LabelVector,
    weights: &BatchWeights,
    assigned_centroids: &Matrix,
) -> Result<(LossBreakdown, Gradients)> {
    backward_terms(model, batch, labels, weights, assigned_centroids, LossTerms::ALL)
}

/// Loss values and parameter gradients for the selected terms. Disabled
/// terms report zero.
pub fn backward_terms(
    model: &NetModel,
    batch: &Matrix,
    labels: &LabelVector,
    weights: &BatchWeights,
    assigned_centroids: &Matrix,
    terms: LossTerms,
) -> Result<(LossBreakdown, Gradients)> {
    let n = batch.rows();
    labels.check_len(n, "backward labels")?;
    if weights.w.len() != n {
        return Err(Error::DimensionMismatch {
            context: "backward weights",
            expected: n,
            found: weights.w.len(),
        });
    }
    if terms.cc && (assigned_centroids.rows() != n || assigned_centroids.cols() != model.embed_dim()) {
        return Err(Error::DimensionMismatch {
            context: "backward assigned centroids",
            expected: n * model.embed_dim(),
            found: assigned_centroids.rows() * assigned_centroids.cols(),
        });
    }
    let cache = model.forward_cached(batch)?;
    let (m, d) = (model.num_classes(), model.embed_dim());

    let mut breakdown = LossBreakdown::default();
    let mut dlogits = Matrix::zeros(n, m);
    let mut demb = Matrix::zeros(n, d);
    if terms.wce {
        let t = one_hot(labels.as_slice(), m);
        let (l, g) = soft_ce_with_grad(&cache.logits, &t, &weights.w);
        breakdown.wce = l;
        add_into(&mut dlogits, &g);
    }
    if terms.im {
        let (l, g) = im_with_grad(&cache.logits);
        breakdown.im = l;
        add_into(&mut dlogits, &g);
    }
    if terms.cc {
        let (l, g) = cc_with_grad(&cache.embeddings, assigned_centroids);
        breakdown.cc = l;
        add_into(&mut demb, &g);
    }
    Ok((breakdown, backprop(model, &cache, &dlogits, demb)))
}

/// Backpropagates given output gradients through the network.
pub(crate) fn backprop(model: &NetModel, cache: &ForwardCache, dlogits: &Matrix, demb_extra: Matrix) -> Gradients {
    let mut grads = Gradients::zeros_like(model);
    let nl = model.layers.len();

    let cls = &model.layers[nl - 1];
    accumulate(&mut grads.layers[nl - 1], dlogits, &cache.embeddings);
    let mut upstream = input_grad(cls, dlogits);
    add_into(&mut upstream, &demb_extra);

    // Bottleneck (linear), then backbone layers in reverse (tanh).
    for l in (0..nl - 1).rev() {
        let input = &cache.inputs[l];
        accumulate(&mut grads.layers[l], &upstream, input);
        if l == 0 {
            break;
        }
        let mut dprev = input_grad(&model.layers[l], &upstream);
        // `input` is tanh output of layer l-1.
        for (g, a) in dprev.as_mut_slice().iter_mut().zip(input.as_slice()) {
            *g *= 1.0 - a * a;
        }
        upstream = dprev;
    }
    grads
}

fn add_into(acc: &mut Matrix, g: &Matrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *a += b;
    }
}

/// `dW += dOut^T X`, `db += sum_rows dOut`.
fn accumulate(grad: &mut Dense, dout: &Matrix, input: &Matrix) {
    for r in 0..dout.rows() {
        let x = input.row(r);
        for (o, &g) in dout.row(r).iter().enumerate() {
            grad.bias[o] += g;
            for (w, xi) in grad.weights.row_mut(o).iter_mut().zip(x) {
                *w += g * xi;
            }
        }
    }
}

/// `dX = dOut W`.
fn input_grad(layer: &Dense, dout: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(dout.rows(), layer.inputs());
    for r in 0..dout.rows() {
        let out = dx.row_mut(r);
        for (o, &g) in dout.row(r).iter().enumerate() {
            for (acc, w) in out.iter_mut().zip(layer.weights.row(o)) {
                *acc += g * w;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Architecture;

    #[test]
    fn cc_term_has_zero_gradient_when_embedding_equals_centroid() {
        let model = NetModel::new(&Architecture::new(3, 2), 2).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.1, 0.5, -0.3, 1.0, -1.0, 0.2]);
        let cache = model.forward_cached(&x).unwrap();
        let labels = LabelVector::new(vec![0, 1], 2).unwrap();
        let (l, g) =
            backward_terms(&model, &x, &labels, &BatchWeights::ones(2), &cache.embeddings, LossTerms::CC).unwrap();
        assert!(l.cc.abs() < 1e-12);
        assert!(g.flatten().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn wce_gradient_scales_with_weights() {
        let model = NetModel::new(&Architecture::new(3, 3), 5).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.1, 0.5, -0.3, 1.0, -1.0, 0.2]);
        let labels = LabelVector::new(vec![2, 1], 3).unwrap();
        let c = Matrix::zeros(2, 16);
        let w1 = BatchWeights::new(vec![1.0, 0.5]).unwrap();
        let w2 = BatchWeights::new(vec![2.0, 1.0]).unwrap();
        let (_, g1) = backward_terms(&model, &x, &labels, &w1, &c, LossTerms::WCE).unwrap();
        let (_, g2) = backward_terms(&model, &x, &labels, &w2, &c, LossTerms::WCE).unwrap();
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }
}

use serde::{Deserialize, Serialize};

use super::{Dense, Gradients, NetModel};
use crate::error::{Error, Result};

pub const MOMENTUM: f64 = 0.9;
pub const BOTTLENECK_LR_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Backbone,
    Bottleneck,
    Classifier,
}

/// SGD with classic momentum: `v <- mu v + g`, `p <- p - lr v`.
#[derive(Debug, Clone)]
pub struct OptimState {
    velocity: Vec<Dense>,
    lr_backbone: f64,
    lr_bottleneck: f64,
    lr_classifier: f64,
    momentum: f64,
    /// Multiplier applied to every group's rate (learning-rate schedules).
    scale: f64,
}

impl OptimState {
    /// Momentum 0.9, bottleneck at ten times the backbone rate, classifier at
    /// the backbone rate.
    pub fn new(model: &NetModel, lr_backbone: f64) -> Self {
        Self::custom(
            model,
            lr_backbone,
            lr_backbone * BOTTLENECK_LR_FACTOR,
            lr_backbone,
            MOMENTUM,
        )
    }

    pub fn custom(
        model: &NetModel,
        lr_backbone: f64,
        lr_bottleneck: f64,
        lr_classifier: f64,
        momentum: f64,
    ) -> Self {
        Self {
            velocity: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
            lr_backbone,
            lr_bottleneck,
            lr_classifier,
            momentum,
            scale: 1.0,
        }
    }

    /// Stops classifier updates.
    pub fn freeze_classifier(mut self) -> Self {
        self.lr_classifier = 0.0;
        self
    }

    pub fn set_scale(&mut self, scale: f64) {
        self.scale = scale;
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn lr(&self, group: ParamGroup) -> f64 {
        self.scale
            * match group {
                ParamGroup::Backbone => self.lr_backbone,
                ParamGroup::Bottleneck => self.lr_bottleneck,
                ParamGroup::Classifier => self.lr_classifier,
            }
    }
}

pub fn sgd_step(model: &mut NetModel, grads: &Gradients, opt: &mut OptimState) -> Result<()> {
    if grads.layers.len() != model.layers.len() {
        return Err(Error::DimensionMismatch {
            context: "sgd_step layer count",
            expected: model.layers.len(),
            found: grads.layers.len(),
        });
    }
    if !grads.is_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    let mu = opt.momentum;
    for l in 0..model.layers.len() {
        let lr = opt.lr(model.group_of(l));
        let (layer, g, v) = (&mut model.layers[l], &grads.layers[l], &mut opt.velocity[l]);
        let params = layer
            .weights
            .as_mut_slice()
            .iter_mut()
            .chain(layer.bias.iter_mut());
        let gs = g.weights.as_slice().iter().chain(&g.bias);
        let vs = v.weights.as_mut_slice().iter_mut().chain(v.bias.iter_mut());
        for ((p, &gi), vi) in params.zip(gs).zip(vs) {
            *vi = mu * *vi + gi;
            *p -= lr * *vi;
        }
    }
    if !model.is_finite() {
        return Err(Error::Divergence("non-finite parameters after update".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Architecture;

    fn constant_grads(model: &NetModel, v: f64) -> Gradients {
        let mut g = Gradients::zeros_like(model);
        for l in &mut g.layers {
            l.weights.as_mut_slice().iter_mut().for_each(|x| *x = v);
            l.bias.iter_mut().for_each(|x| *x = v);
        }
        g
    }

    #[test]
    fn default_rates() {
        let model = NetModel::new(&Architecture::new(4, 3), 0).unwrap();
        let opt = OptimState::new(&model, 0.01);
        assert_eq!(opt.momentum(), 0.9);
        assert_eq!(opt.lr(ParamGroup::Bottleneck) / opt.lr(ParamGroup::Backbone), 10.0);
        assert_eq!(opt.lr(ParamGroup::Classifier), 0.01);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut model = NetModel::new(&Architecture::new(4, 3), 0).unwrap();
        let before = model.flatten();
        let mut opt = OptimState::new(&model, 0.1);
        let g = Gradients::zeros_like(&model);
        sgd_step(&mut model, &g, &mut opt).unwrap();
        assert_eq!(model.flatten(), before);
    }

    #[test]
    fn plain_step() {
        let mut model = NetModel::new(&Architecture::new(4, 3), 0).unwrap();
        let before = model.flatten();
        let mut opt = OptimState::custom(&model, 1.0, 1.0, 1.0, 0.0);
        let g = constant_grads(&model, 0.25);
        sgd_step(&mut model, &g, &mut opt).unwrap();
        for (a, b) in model.flatten().iter().zip(&before) {
            assert_eq!(*a, b - 0.25);
        }
    }

    #[test]
    fn momentum_two_steps() {
        let mut model = NetModel::new(&Architecture::new(4, 3), 0).unwrap();
        let before = model.flatten();
        let mut opt = OptimState::custom(&model, 1.0, 1.0, 1.0, 0.9);
        let g = constant_grads(&model, 0.5);
        sgd_step(&mut model, &g, &mut opt).unwrap();
        sgd_step(&mut model, &g, &mut opt).unwrap();
        for (a, b) in model.flatten().iter().zip(&before) {
            assert!((b - a - (0.5 + 1.9 * 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut model = NetModel::new(&Architecture::new(4, 3), 0).unwrap();
        let mut opt = OptimState::new(&model, 0.1);
        let g = constant_grads(&model, f64::NAN);
        assert!(matches!(sgd_step(&mut model, &g, &mut opt), Err(Error::Divergence(_))));
    }

    #[test]
    fn frozen_classifier_does_not_move() {
        let mut model = NetModel::new(&Architecture::new(4, 3), 0).unwrap();
        let cls_before = model.layers()[2].clone();
        let mut opt = OptimState::new(&model, 0.1).freeze_classifier();
        let g = constant_grads(&model, 1.0);
        sgd_step(&mut model, &g, &mut opt).unwrap();
        assert_eq!(model.layers()[2], cls_before);
        assert_ne!(model.layers()[1].bias[0], 0.0);
    }
}

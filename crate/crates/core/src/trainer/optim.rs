//! SGD with momentum and decoupled-from-bias weight decay.

use ndarray::{Array1, Array2, Zip};

use crate::backbone::{ConvGrads, Model};
use crate::losses::{DomainClassifier, DomainClassifierGrads};

/// Gradients (or momentum buffers) for every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv: Vec<ConvGrads>,
    pub estimator_weight: Array2<f64>,
    pub estimator_bias: Array1<f64>,
    pub domain: Option<DomainClassifierGrads>,
}

impl Gradients {
    pub fn zeros(model: &Model, domain: Option<&DomainClassifier>) -> Gradients {
        Gradients {
            conv: model
                .extractor
                .layers
                .iter()
                .map(|l| ConvGrads {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
            estimator_weight: Array2::zeros(model.estimator.weight.raw_dim()),
            estimator_bias: Array1::zeros(model.estimator.bias.raw_dim()),
            domain: domain.map(|d| DomainClassifierGrads {
                w1: Array2::zeros(d.w1.raw_dim()),
                b1: Array1::zeros(d.b1.raw_dim()),
                w2: Array1::zeros(d.w2.raw_dim()),
                b2: 0.0,
            }),
        }
    }

    /// Sum of squares over every entry.
    pub fn squared_norm(&self) -> f64 {
        let mut s = 0.0;
        for g in &self.conv {
            s += g.weight.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
            s += g.bias.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        }
        s += self.estimator_weight.iter().map(|v| v * v).sum::<f64>();
        s += self.estimator_bias.iter().map(|v| v * v).sum::<f64>();
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Gradients,
}

macro_rules! sgd_update {
    ($param:expr, $grad:expr, $vel:expr, $lr:expr, $mom:expr, $wd:expr, $t:ty) => {
        Zip::from($param).and($grad).and($vel).for_each(|p, &g, v| {
            let d = g + ($wd as $t) * *p;
            *v = ($mom as $t) * *v + d;
            *p -= ($lr as $t) * *v;
        })
    };
}

impl Sgd {
    pub fn new(model: &Model, domain: Option<&DomainClassifier>, momentum: f64, weight_decay: f64) -> Sgd {
        Sgd {
            momentum,
            weight_decay,
            velocity: Gradients::zeros(model, domain),
        }
    }

    /// One update. Weight decay applies to weight matrices, not biases.
    pub fn step(&mut self, model: &mut Model, domain: Option<&mut DomainClassifier>, grads: &Gradients, lr: f64) {
        let (m, wd) = (self.momentum, self.weight_decay);
        for ((layer, g), v) in model.extractor.layers.iter_mut().zip(&grads.conv).zip(&mut self.velocity.conv) {
            sgd_update!(&mut layer.weight, &g.weight, &mut v.weight, lr, m, wd, f32);
            sgd_update!(&mut layer.bias, &g.bias, &mut v.bias, lr, m, 0.0, f32);
        }
        let e = &mut model.estimator;
        sgd_update!(&mut e.weight, &grads.estimator_weight, &mut self.velocity.estimator_weight, lr, m, wd, f64);
        sgd_update!(&mut e.bias, &grads.estimator_bias, &mut self.velocity.estimator_bias, lr, m, 0.0, f64);
        if let (Some(d), Some(g), Some(v)) = (domain, &grads.domain, &mut self.velocity.domain) {
            sgd_update!(&mut d.w1, &g.w1, &mut v.w1, lr, m, wd, f64);
            sgd_update!(&mut d.b1, &g.b1, &mut v.b1, lr, m, 0.0, f64);
            sgd_update!(&mut d.w2, &g.w2, &mut v.w2, lr, m, wd, f64);
            v.b2 = m * v.b2 + g.b2;
            d.b2 -= lr * v.b2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::rng::seeded_rng;

    fn tiny() -> Model {
        let cfg = RunConfig {
            feature_dim: 4,
            base_width: 2,
            image_size: 16,
            ..RunConfig::default()
        };
        Model::new(&cfg, &mut seeded_rng(0))
    }

    #[test]
    fn plain_sgd_step() {
        let mut model = tiny();
        let before = model.clone();
        let mut grads = Gradients::zeros(&model, None);
        grads.estimator_weight.fill(1.0);
        grads.estimator_bias.fill(2.0);
        let mut opt = Sgd::new(&model, None, 0.0, 0.0);
        opt.step(&mut model, None, &grads, 0.1);
        let dw = &before.estimator.weight - &model.estimator.weight;
        assert!(dw.iter().all(|&v| (v - 0.1).abs() < 1e-12));
        let db = &before.estimator.bias - &model.estimator.bias;
        assert!(db.iter().all(|&v| (v - 0.2).abs() < 1e-12));
        assert_eq!(before.extractor, model.extractor);
    }

    #[test]
    fn momentum_accumulates_and_decay_skips_bias() {
        let mut model = tiny();
        model.estimator.weight.fill(1.0);
        model.estimator.bias.fill(1.0);
        let grads = Gradients::zeros(&model, None);
        let mut opt = Sgd::new(&model, None, 0.9, 0.5);
        opt.step(&mut model, None, &grads, 0.1);
        // v = 0.5, w = 1 - 0.05
        assert!((model.estimator.weight[[0, 0]] - 0.95).abs() < 1e-12);
        assert_eq!(model.estimator.bias[0], 1.0);
        opt.step(&mut model, None, &grads, 0.1);
        // v = 0.9 * 0.5 + 0.5 * 0.95
        let v = 0.45 + 0.475;
        assert!((model.estimator.weight[[0, 0]] - (0.95 - 0.1 * v)).abs() < 1e-12);
    }
}

//! Adversarial domain alignment: a small domain classifier behind a
//! gradient-reversal layer.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Identity on the forward pass, `-scale * g` on the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReversal {
    pub scale: f64,
}

impl Default for GradientReversal {
    fn default() -> Self {
        GradientReversal { scale: 1.0 }
    }
}

impl GradientReversal {
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.to_owned()
    }

    pub fn backward(&self, upstream: ArrayView2<f64>) -> Array2<f64> {
        upstream.mapv(|g| -self.scale * g)
    }
}

/// Two-layer perceptron `C -> hidden -> 1` with ReLU, predicting the
/// probability that a feature comes from the source-like set.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifier {
    /// `hidden x C`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifierGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone)]
pub struct DannOutput {
    /// Balanced binary cross-entropy: mean of the per-domain means.
    pub loss: f64,
    /// Gradient of `loss` w.r.t. the inputs (not reversed).
    pub grad_source: Array2<f64>,
    pub grad_target: Array2<f64>,
    pub params: DomainClassifierGrads,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl DomainClassifier {
    /// Hidden width equals the feature width.
    pub fn new<R: Rng>(channels: usize, rng: &mut R) -> DomainClassifier {
        let s1 = (2.0 / channels as f64).sqrt();
        let n1 = Normal::new(0.0, s1).expect("positive std");
        let n2 = Normal::new(0.0, (1.0 / channels as f64).sqrt()).expect("positive std");
        DomainClassifier {
            w1: Array2::from_shape_simple_fn((channels, channels), || n1.sample(rng)),
            b1: Array1::zeros(channels),
            w2: Array1::from_shape_simple_fn(channels, || n2.sample(rng)),
            b2: 0.0,
        }
    }

    /// Source-domain logit for each row of `x`.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut h = x.dot(&self.w1.t());
        h += &self.b1;
        h.mapv_inplace(|v| v.max(0.0));
        h.dot(&self.w2) + self.b2
    }

    pub fn probability(&self, x: ArrayView1<f64>) -> f64 {
        sigmoid(self.logits(x.insert_axis(Axis(0)))[0])
    }

    /// Balanced domain cross-entropy with source label 1 and target label 0.
    pub fn loss(&self, source: ArrayView2<f64>, target: ArrayView2<f64>) -> Option<f64> {
        if source.nrows() == 0 || target.nrows() == 0 {
            return None;
        }
        let ls = self.logits(source).mapv(|l| softplus(-l)).mean()?;
        let lt = self.logits(target).mapv(softplus).mean()?;
        Some(0.5 * (ls + lt))
    }

    pub fn loss_and_grads(&self, source: ArrayView2<f64>, target: ArrayView2<f64>) -> Option<DannOutput> {
        let (m, n) = (source.nrows(), target.nrows());
        if m == 0 || n == 0 {
            return None;
        }
        let mut params = DomainClassifierGrads {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array1::zeros(self.w2.len()),
            b2: 0.0,
        };
        let mut loss = 0.0;
        let mut side = |x: ArrayView2<f64>, label: f64, weight: f64| -> Array2<f64> {
            let mut pre = x.dot(&self.w1.t());
            pre += &self.b1;
            let hidden = pre.mapv(|v| v.max(0.0));
            let logit = hidden.dot(&self.w2) + self.b2;
            loss += weight
                * logit
                    .iter()
                    .map(|&l| if label > 0.5 { softplus(-l) } else { softplus(l) })
                    .sum::<f64>();
            let dlogit = logit.mapv(|l| weight * (sigmoid(l) - label));
            params.b2 += dlogit.sum();
            params.w2 += &hidden.t().dot(&dlogit);
            // d hidden = dlogit * w2, masked by ReLU
            let mut dpre = Array2::zeros(pre.raw_dim());
            for ((i, j), v) in dpre.indexed_iter_mut() {
                if pre[[i, j]] > 0.0 {
                    *v = dlogit[i] * self.w2[j];
                }
            }
            params.b1 += &dpre.sum_axis(Axis(0));
            params.w1 += &dpre.t().dot(&x);
            dpre.dot(&self.w1)
        };
        let grad_source = side(source, 1.0, 0.5 / m as f64);
        let grad_target = side(target, 0.0, 0.5 / n as f64);
        Some(DannOutput {
            loss,
            grad_source,
            grad_target,
            params,
        })
    }
}

/// Domain cross-entropy of `classifier` on the two sets, with the feature
/// gradients already passed through the reversal layer.
pub fn gradient_reversal_uda(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    classifier: &DomainClassifier,
    reversal: GradientReversal,
) -> Option<DannOutput> {
    let mut out = classifier.loss_and_grads(reversal.forward(source).view(), reversal.forward(target).view())?;
    out.grad_source = reversal.backward(out.grad_source.view());
    out.grad_target = reversal.backward(out.grad_target.view());
    Some(out)
}

//! Training objectives: classification cross-entropy, the adaptation loss
//! between source-like and target-like features (MMD or adversarial), and the
//! Universum L1 regulariser, composed into one weighted total.

mod classification;
mod dann;
mod mmd;
mod universum;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use classification::{classification_loss, one_hot_targets, soft_cross_entropy};
pub use dann::{
    gradient_reversal_uda, DannOutput, DomainClassifier, DomainClassifierGrads, GradientReversal,
};
pub use mmd::{gaussian_kernel, mmd_loss, mmd_with_grad, resolve_bandwidth, Bandwidth, MmdOptions, MmdOutput};
pub use universum::{universum_grad, universum_reg, UniversumNorm};

use crate::config::{RunConfig, UdaMethod};

/// Per-step loss terms; `total = l_c + lambda1 * l_d + lambda2 * l_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_d: f64,
    pub l_u: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(l_c: f64, l_d: f64, l_u: f64, lambda1: f64, lambda2: f64) -> LossBreakdown {
        LossBreakdown {
            l_c,
            l_d,
            l_u,
            total: l_c + lambda1 * l_d + lambda2 * l_u,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_c.is_finite() && self.l_d.is_finite() && self.l_u.is_finite() && self.total.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DalOptions {
    pub lambda1: f64,
    pub lambda2: f64,
    pub uda: UdaMethod,
    pub mmd: MmdOptions,
    pub universum: UniversumNorm,
}

impl DalOptions {
    pub fn from_config(cfg: &RunConfig) -> DalOptions {
        DalOptions {
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            uda: cfg.uda_method,
            mmd: MmdOptions {
                bandwidth: cfg.mmd_sigma.map_or(Bandwidth::Median, Bandwidth::Fixed),
                unbiased: cfg.mmd_unbiased,
            },
            universum: UniversumNorm::from_literal_flag(cfg.eq4_literal),
        }
    }
}

/// Unweighted adaptation and Universum terms with their feature gradients.
/// For the adversarial method the feature gradients are already reversed.
#[derive(Debug, Clone)]
pub struct DalTerms {
    pub l_d: f64,
    pub l_u: f64,
    pub grad_source: Array2<f64>,
    pub grad_fake: Array2<f64>,
    pub grad_true: Array2<f64>,
    pub grad_universum: Array2<f64>,
    /// Domain classifier parameter gradients of `l_d` (adversarial method only).
    pub classifier: Option<DomainClassifierGrads>,
}

impl DalTerms {
    /// `lambda1 * l_d + lambda2 * l_u`
    pub fn weighted(&self, opts: &DalOptions) -> f64 {
        opts.lambda1 * self.l_d + opts.lambda2 * self.l_u
    }
}

/// Adaptation loss between `S ∪ T^f` and `T^t`, plus the Universum term on `T^u`.
/// Every set holds one feature vector per row; empty sets contribute zero.
pub fn dal_loss(
    source: ArrayView2<f64>,
    fake: ArrayView2<f64>,
    true_target: ArrayView2<f64>,
    universum: ArrayView2<f64>,
    opts: &DalOptions,
    classifier: Option<&DomainClassifier>,
) -> DalTerms {
    let m = source.nrows();
    let source_like = concatenate(Axis(0), &[source, fake]).expect("equal feature widths");
    let mut terms = DalTerms {
        l_d: 0.0,
        l_u: universum_reg(universum, opts.universum),
        grad_source: Array2::zeros(source.raw_dim()),
        grad_fake: Array2::zeros(fake.raw_dim()),
        grad_true: Array2::zeros(true_target.raw_dim()),
        grad_universum: universum_grad(universum, opts.universum),
        classifier: None,
    };
    let split = |g: &Array2<f64>| (g.slice(s![..m, ..]).to_owned(), g.slice(s![m.., ..]).to_owned());
    match opts.uda {
        UdaMethod::None => {}
        UdaMethod::Mmd => {
            if let Some(out) = mmd_with_grad(source_like.view(), true_target, opts.mmd) {
                terms.l_d = out.value;
                (terms.grad_source, terms.grad_fake) = split(&out.grad_source);
                terms.grad_true = out.grad_target;
            }
        }
        UdaMethod::Dann => {
            let clf = classifier.expect("adversarial alignment needs a domain classifier");
            if let Some(out) = gradient_reversal_uda(source_like.view(), true_target, clf, GradientReversal::default()) {
                terms.l_d = out.loss;
                (terms.grad_source, terms.grad_fake) = split(&out.grad_source);
                terms.grad_true = out.grad_target;
                terms.classifier = Some(out.params);
            }
        }
    }
    terms
}

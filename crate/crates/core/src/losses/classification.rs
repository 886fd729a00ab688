use ndarray::{Array2, ArrayView2, Axis};

use crate::annotation::ClassMask;

/// Mean softmax cross-entropy of `scores` (`K x B`) against target
/// distributions `targets` (`K x B`, columns summing to 1), and its gradient
/// with respect to `scores`.
pub fn soft_cross_entropy(scores: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(scores.dim(), targets.dim(), "scores and targets must match");
    let b = scores.ncols().max(1) as f64;
    let mut grad = Array2::zeros(scores.raw_dim());
    let mut loss = 0.0;
    for ((s, t), mut g) in scores
        .axis_iter(Axis(1))
        .zip(targets.axis_iter(Axis(1)))
        .zip(grad.axis_iter_mut(Axis(1)))
    {
        let max = s.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = s.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        for ((gi, &si), &ti) in g.iter_mut().zip(s.iter()).zip(t.iter()) {
            loss -= ti * (si - log_z);
            *gi = ((si - log_z).exp() - ti) / b;
        }
    }
    (loss / b, grad)
}

/// One-hot target columns for the dominant class of each mask.
pub fn one_hot_targets(masks: &[ClassMask], num_classes: usize) -> Array2<f64> {
    let mut t = Array2::zeros((num_classes, masks.len()));
    for (i, m) in masks.iter().enumerate() {
        t[[m.dominant_class(), i]] = 1.0;
    }
    t
}

/// Batch-mean cross-entropy of softmaxed score columns against each image's dominant class.
pub fn classification_loss(scores: ArrayView2<f64>, masks: &[ClassMask]) -> f64 {
    let targets = one_hot_targets(masks, scores.nrows());
    soft_cross_entropy(scores, targets.view()).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn confident_correct_logits_vanish() {
        let scores = array![[60.0], [0.0], [0.0]];
        let masks = [ClassMask::one_hot(0, 3).unwrap()];
        assert!(classification_loss(scores.view(), &masks) < 1e-20);
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let scores = Array2::from_elem((4, 3), 0.7);
        let masks: Vec<_> = (0..3).map(|k| ClassMask::one_hot(k, 4).unwrap()).collect();
        let l = classification_loss(scores.view(), &masks);
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn matches_hand_computation() {
        let scores = array![[0.3, -1.2], [1.7, 0.4], [-0.5, 2.2]];
        let masks = [ClassMask::one_hot(1, 3).unwrap(), ClassMask::one_hot(0, 3).unwrap()];
        // independent scalar route: -log(e^{s_y} / sum e^{s})
        let col = |c: [f64; 3], y: usize| -> f64 {
            let denom: f64 = c.iter().map(|v: &f64| v.exp()).sum();
            -(c[y].exp() / denom).ln()
        };
        let want = (col([0.3, 1.7, -0.5], 1) + col([-1.2, 0.4, 2.2], 0)) / 2.0;
        assert!((classification_loss(scores.view(), &masks) - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let scores = array![[0.3, -1.2], [1.7, 0.4], [-0.5, 2.2]];
        let targets = array![[0.0, 0.25], [1.0, 0.0], [0.0, 0.75]];
        let (_, g) = soft_cross_entropy(scores.view(), targets.view());
        let h = 1e-6;
        for idx in [(0, 0), (1, 1), (2, 0), (2, 1)] {
            let mut p = scores.clone();
            p[idx] += h;
            let mut m = scores.clone();
            m[idx] -= h;
            let fd = (soft_cross_entropy(p.view(), targets.view()).0
                - soft_cross_entropy(m.view(), targets.view()).0)
                / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-7);
        }
    }
}

use ndarray::{s, Array3};
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// Hide-and-seek: split the image into a `grid x grid` lattice of cells and
/// zero each cell independently with probability `prob`.
pub fn has_augment<R: Rng>(image: &mut Array3<f32>, grid: usize, prob: f64, rng: &mut R) {
    let (_, h, w) = image.dim();
    assert!(grid > 0 && h % grid == 0 && w % grid == 0, "grid must divide the image");
    let (ch, cw) = (h / grid, w / grid);
    for gy in 0..grid {
        for gx in 0..grid {
            if rng.random_bool(prob) {
                image
                    .slice_mut(s![.., gy * ch..(gy + 1) * ch, gx * cw..(gx + 1) * cw])
                    .fill(0.0);
            }
        }
    }
}

/// Rectangle `[y0, y1) x [x0, x1)` pasted from the second image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutRegion {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CutRegion {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

#[derive(Debug, Clone)]
pub struct Mixed {
    pub image: Array3<f32>,
    /// Soft label, one weight per class, summing to one.
    pub label: Vec<f64>,
    /// Fraction of the result taken from the first image.
    pub lambda: f64,
}

/// Paste `region` of `b` onto `a`. The label weight of `a` is the fraction
/// of pixels left untouched.
pub fn cutmix_with_region(a: &Array3<f32>, label_a: &[f64], b: &Array3<f32>, label_b: &[f64], region: CutRegion) -> Mixed {
    let (_, h, w) = a.dim();
    assert_eq!(a.dim(), b.dim());
    assert!(region.y0 <= region.y1 && region.y1 <= h && region.x0 <= region.x1 && region.x1 <= w);
    let mut image = a.clone();
    let r = s![.., region.y0..region.y1, region.x0..region.x1];
    image.slice_mut(r).assign(&b.slice(r));
    let lambda = 1.0 - region.area() as f64 / (h * w) as f64;
    let label = label_a
        .iter()
        .zip(label_b)
        .map(|(&pa, &pb)| lambda * pa + (1.0 - lambda) * pb)
        .collect();
    Mixed { image, label, lambda }
}

/// CutMix with the mixing ratio drawn from `Beta(alpha, alpha)` and a box
/// of matching area centred uniformly, clipped at the border.
pub fn cutmix_augment<R: Rng>(
    a: &Array3<f32>,
    label_a: &[f64],
    b: &Array3<f32>,
    label_b: &[f64],
    alpha: f64,
    rng: &mut R,
) -> Mixed {
    let (_, h, w) = a.dim();
    let lam: f64 = Beta::new(alpha, alpha).expect("alpha > 0").sample(rng);
    let cut = (1.0 - lam).sqrt();
    let (cut_h, cut_w) = ((h as f64 * cut) as usize, (w as f64 * cut) as usize);
    let cy = rng.random_range(0..h);
    let cx = rng.random_range(0..w);
    let region = CutRegion {
        y0: cy.saturating_sub(cut_h / 2),
        y1: (cy + cut_h / 2).min(h),
        x0: cx.saturating_sub(cut_w / 2),
        x1: (cx + cut_w / 2).min(w),
    };
    cutmix_with_region(a, label_a, b, label_b, region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn filled(v: f32) -> Array3<f32> {
        Array3::from_elem((3, 8, 8), v)
    }

    #[test]
    fn has_zeroes_whole_cells() {
        let mut rng = seeded_rng(0);
        let mut im = filled(1.0);
        has_augment(&mut im, 4, 0.5, &mut rng);
        for gy in 0..4 {
            for gx in 0..4 {
                let cell = im.slice(s![.., gy * 2..gy * 2 + 2, gx * 2..gx * 2 + 2]);
                let first = cell[[0, 0, 0]];
                assert!(cell.iter().all(|&v| v == first));
            }
        }
        let mut none = filled(1.0);
        has_augment(&mut none, 4, 0.0, &mut rng);
        assert!(none.iter().all(|&v| v == 1.0));
        let mut all = filled(1.0);
        has_augment(&mut all, 2, 1.0, &mut rng);
        assert!(all.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cutmix_extremes_and_half() {
        let (a, b) = (filled(0.0), filled(1.0));
        let (la, lb) = ([1.0, 0.0], [0.0, 1.0]);
        let empty = cutmix_with_region(&a, &la, &b, &lb, CutRegion { y0: 3, y1: 3, x0: 0, x1: 8 });
        assert_eq!(empty.lambda, 1.0);
        assert_eq!(empty.image, a);
        assert_eq!(empty.label, vec![1.0, 0.0]);
        let full = cutmix_with_region(&a, &la, &b, &lb, CutRegion { y0: 0, y1: 8, x0: 0, x1: 8 });
        assert_eq!(full.lambda, 0.0);
        assert_eq!(full.image, b);
        let half = cutmix_with_region(&a, &la, &b, &lb, CutRegion { y0: 0, y1: 4, x0: 0, x1: 8 });
        assert_eq!(half.lambda, 0.5);
        assert_eq!(half.label, vec![0.5, 0.5]);
        assert_eq!(half.image.sum(), 3.0 * 32.0);
    }

    #[test]
    fn random_cutmix_lambda_matches_pixels() {
        let mut rng = seeded_rng(4);
        let (a, b) = (filled(0.0), filled(1.0));
        for _ in 0..50 {
            let m = cutmix_augment(&a, &[1.0, 0.0], &b, &[0.0, 1.0], 1.0, &mut rng);
            let from_b = m.image.sum() as f64 / (3.0 * 64.0);
            assert!((m.lambda - (1.0 - from_b)).abs() < 1e-12);
            assert!((m.label.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

//! Gaussian-kernel maximum mean discrepancy between two sample sets.

use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, Axis};

/// Kernel bandwidth selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Median of the pairwise distances between all pooled samples.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdOptions {
    pub bandwidth: Bandwidth,
    /// Drop the `i == j` terms of the within-set sums (U-statistic).
    pub unbiased: bool,
}

impl Default for MmdOptions {
    fn default() -> Self {
        MmdOptions {
            bandwidth: Bandwidth::Median,
            unbiased: false,
        }
    }
}

/// `exp(-|a - b|^2 / (2 sigma^2))`
pub fn gaussian_kernel(a: ArrayView1<f64>, b: ArrayView1<f64>, sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Pairwise squared distances between the rows of `x`, by explicit
/// differences so duplicate rows come out exactly zero.
fn sq_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

fn median_of_pairs(d2: &Array2<f64>) -> f64 {
    let n = d2.nrows();
    let mut dists: Vec<f64> = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(d2[[i, j]].sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if *m > 1e-12 {
        *m
    } else {
        1.0
    }
}

/// Bandwidth the options resolve to for these two sets.
pub fn resolve_bandwidth(source: ArrayView2<f64>, target: ArrayView2<f64>, bw: Bandwidth) -> f64 {
    match bw {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => {
            let x = concatenate(Axis(0), &[source, target]).expect("equal widths");
            median_of_pairs(&sq_distances(x.view()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct MmdOutput {
    pub value: f64,
    pub sigma: f64,
    /// Gradient w.r.t. each source row (bandwidth held fixed).
    pub grad_source: Array2<f64>,
    pub grad_target: Array2<f64>,
}

/// Squared MMD of `source` vs `target` (one sample per row) with its gradient.
///
/// The default estimator keeps the `i == j` pairs in the within-set sums.
/// Returns `None` when either set is empty, or when the unbiased estimator
/// is requested on a set with fewer than two samples.
pub fn mmd_with_grad(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    opts: MmdOptions,
) -> Option<MmdOutput> {
    let (m, n) = (source.nrows(), target.nrows());
    if m == 0 || n == 0 || (opts.unbiased && (m < 2 || n < 2)) {
        return None;
    }
    let x = concatenate(Axis(0), &[source, target]).expect("equal widths");
    let d2 = sq_distances(x.view());
    let sigma = match opts.bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => median_of_pairs(&d2),
    };
    let inv = 1.0 / (2.0 * sigma * sigma);
    let (mf, nf) = (m as f64, n as f64);
    let (wss, wtt) = if opts.unbiased {
        (1.0 / (mf * (mf - 1.0)), 1.0 / (nf * (nf - 1.0)))
    } else {
        (1.0 / (mf * mf), 1.0 / (nf * nf))
    };
    let wst = -1.0 / (mf * nf);

    // a[i][j] = coefficient(i, j) * h(x_i, x_j)
    let total = m + n;
    let mut a = Array2::<f64>::zeros((total, total));
    let mut value = 0.0;
    for i in 0..total {
        for j in 0..total {
            if opts.unbiased && i == j {
                continue;
            }
            let coef = match (i < m, j < m) {
                (true, true) => wss,
                (false, false) => wtt,
                _ => wst,
            };
            let h = (-d2[[i, j]] * inv).exp();
            a[[i, j]] = coef * h;
            value += coef * h;
        }
    }
    // dL/dx_i = -(2 / sigma^2) * sum_j a_ij (x_i - x_j)
    let rowsum = a.sum_axis(Axis(1));
    let ax = a.dot(&x);
    let mut grad = x.clone();
    for (i, mut row) in grad.axis_iter_mut(Axis(0)).enumerate() {
        row *= rowsum[i];
        row -= &ax.row(i);
    }
    grad *= -2.0 / (sigma * sigma);
    Some(MmdOutput {
        value,
        sigma,
        grad_source: grad.slice(s![..m, ..]).to_owned(),
        grad_target: grad.slice(s![m.., ..]).to_owned(),
    })
}

/// Squared MMD; `None` signals an empty set (the term is skipped).
pub fn mmd_loss(source: ArrayView2<f64>, target: ArrayView2<f64>, opts: MmdOptions) -> Option<f64> {
    mmd_with_grad(source, target, opts).map(|o| o.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    /// Direct evaluation of the three double sums.
    fn oracle(s: &Array2<f64>, t: &Array2<f64>, sigma: f64) -> f64 {
        let (m, n) = (s.nrows() as f64, t.nrows() as f64);
        let mut st = 0.0;
        for a in s.rows() {
            for b in t.rows() {
                st += 2.0 * gaussian_kernel(a, b, sigma);
            }
        }
        let mut ss = 0.0;
        for a in s.rows() {
            for b in s.rows() {
                ss += gaussian_kernel(a, b, sigma);
            }
        }
        let mut tt = 0.0;
        for a in t.rows() {
            for b in t.rows() {
                tt += gaussian_kernel(a, b, sigma);
            }
        }
        -st / (m * n) + ss / (m * m) + tt / (n * n)
    }

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-2.0..2.0))
    }

    #[test]
    fn kernel_values() {
        let a = array![1.0, 2.0];
        assert_eq!(gaussian_kernel(a.view(), a.view(), 0.7), 1.0);
        // |a-b|^2 = 2 sigma^2
        let sigma = 1.5;
        let b = array![1.0 + sigma, 2.0 + sigma];
        let v = gaussian_kernel(a.view(), b.view(), sigma);
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
        assert!((v - 0.367879).abs() < 1e-6);
        assert_eq!(v, gaussian_kernel(b.view(), a.view(), sigma));
    }

    #[test]
    fn singleton_closed_form() {
        let sigma = 0.8;
        let s = array![[0.0, 0.0]];
        let t = array![[sigma, sigma]];
        let v = mmd_loss(s.view(), t.view(), MmdOptions {
            bandwidth: Bandwidth::Fixed(sigma),
            unbiased: false,
        })
        .unwrap();
        assert!((v - (2.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-12);
        assert!((v - 1.264241).abs() < 1e-6);
    }

    #[test]
    fn identical_sets_are_zero() {
        let mut rng = seeded_rng(1);
        let s = random(7, 4, &mut rng);
        let v = mmd_loss(s.view(), s.view(), MmdOptions::default()).unwrap();
        assert!(v.abs() < 1e-6);
    }

    #[test]
    fn empty_set_skips() {
        let s = Array2::<f64>::zeros((0, 3));
        let t = Array2::<f64>::ones((2, 3));
        assert!(mmd_loss(s.view(), t.view(), MmdOptions::default()).is_none());
        assert!(mmd_loss(t.view(), s.view(), MmdOptions::default()).is_none());
    }

    #[test]
    fn matches_double_loop_on_random_sets() {
        let mut rng = seeded_rng(2);
        let s = random(8, 5, &mut rng);
        let t = random(5, 5, &mut rng);
        let out = mmd_with_grad(s.view(), t.view(), MmdOptions::default()).unwrap();
        assert!((out.value - oracle(&s, &t, out.sigma)).abs() < 1e-6);
    }

    #[test]
    fn unbiased_drops_self_pairs() {
        let mut rng = seeded_rng(3);
        let s = random(4, 3, &mut rng);
        let t = random(6, 3, &mut rng);
        let sigma = 1.3;
        let opts = MmdOptions {
            bandwidth: Bandwidth::Fixed(sigma),
            unbiased: true,
        };
        let got = mmd_loss(s.view(), t.view(), opts).unwrap();
        let (m, n) = (4.0, 6.0);
        let mut want = 0.0;
        for (i, a) in s.rows().into_iter().enumerate() {
            for (j, b) in s.rows().into_iter().enumerate() {
                if i != j {
                    want += gaussian_kernel(a, b, sigma) / (m * (m - 1.0));
                }
            }
            for b in t.rows() {
                want -= 2.0 * gaussian_kernel(a, b, sigma) / (m * n);
            }
        }
        for (i, a) in t.rows().into_iter().enumerate() {
            for (j, b) in t.rows().into_iter().enumerate() {
                if i != j {
                    want += gaussian_kernel(a, b, sigma) / (n * (n - 1.0));
                }
            }
        }
        assert!((got - want).abs() < 1e-12);
        assert!(mmd_loss(s.slice(s![..1, ..]), t.view(), opts).is_none());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded_rng(4);
        let s = random(5, 3, &mut rng);
        let t = random(4, 3, &mut rng);
        for unbiased in [false, true] {
            let opts = MmdOptions {
                bandwidth: Bandwidth::Fixed(1.1),
                unbiased,
            };
            let out = mmd_with_grad(s.view(), t.view(), opts).unwrap();
            let h = 1e-6;
            for (r, c) in [(0, 0), (2, 1), (4, 2)] {
                let mut p = s.clone();
                p[[r, c]] += h;
                let mut q = s.clone();
                q[[r, c]] -= h;
                let fd = (mmd_loss(p.view(), t.view(), opts).unwrap()
                    - mmd_loss(q.view(), t.view(), opts).unwrap())
                    / (2.0 * h);
                assert!((fd - out.grad_source[[r, c]]).abs() < 1e-7);
            }
            for (r, c) in [(0, 2), (3, 0)] {
                let mut p = t.clone();
                p[[r, c]] += h;
                let mut q = t.clone();
                q[[r, c]] -= h;
                let fd = (mmd_loss(s.view(), p.view(), opts).unwrap()
                    - mmd_loss(s.view(), q.view(), opts).unwrap())
                    / (2.0 * h);
                assert!((fd - out.grad_target[[r, c]]).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn non_negative_and_symmetric(seed in any::<u64>(), m in 1usize..10, n in 1usize..10, c in 1usize..6) {
            let mut rng = seeded_rng(seed);
            let s = random(m, c, &mut rng);
            let t = random(n, c, &mut rng);
            let a = mmd_loss(s.view(), t.view(), MmdOptions::default()).unwrap();
            let b = mmd_loss(t.view(), s.view(), MmdOptions::default()).unwrap();
            prop_assert!(a >= -1e-9);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

use ndarray::{Array2, ArrayView2};

/// Bilinear resize with half-pixel centres (`align_corners = false`),
/// clamping samples at the border.
pub fn bilinear_upsample(src: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let p = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (p.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| axis(x, sx, w)).collect();
    let mut out = Array2::zeros((out_h, out_w));
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, sy, h);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
            let bot = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
            out[[y, x]] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Rescale to `[0, 1]`. A constant map becomes all zeros.
pub fn normalize_min_max(map: &mut Array2<f64>) {
    let (lo, hi) = map
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        map.fill(0.0);
        return;
    }
    map.mapv_inplace(|v| (v - lo) / range);
}

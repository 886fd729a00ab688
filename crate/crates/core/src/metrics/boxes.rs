use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::annotation::Bbox;

/// Box with inclusive integer pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    /// The continuous box covering these pixels.
    pub fn to_bbox(self) -> Bbox {
        Bbox::new(self.x0 as f64, self.y0 as f64, (self.x1 + 1) as f64, (self.y1 + 1) as f64)
    }
}

/// Tight box around the largest 4-connected foreground component. The
/// component found first in raster order wins ties.
pub fn mask_to_box(mask: ArrayView2<bool>) -> Option<PixelBox> {
    let (h, w) = mask.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut stack = Vec::new();
    let mut best: Option<(usize, PixelBox)> = None;
    for y in 0..h {
        for x in 0..w {
            if !mask[[y, x]] || seen[[y, x]] {
                continue;
            }
            seen[[y, x]] = true;
            stack.push((y, x));
            let mut size = 0;
            let mut b = PixelBox { x0: x, y0: y, x1: x, y1: y };
            while let Some((cy, cx)) = stack.pop() {
                size += 1;
                b.x0 = b.x0.min(cx);
                b.x1 = b.x1.max(cx);
                b.y0 = b.y0.min(cy);
                b.y1 = b.y1.max(cy);
                let mut visit = |ny: usize, nx: usize| {
                    if mask[[ny, nx]] && !seen[[ny, nx]] {
                        seen[[ny, nx]] = true;
                        stack.push((ny, nx));
                    }
                };
                if cy > 0 {
                    visit(cy - 1, cx);
                }
                if cy + 1 < h {
                    visit(cy + 1, cx);
                }
                if cx > 0 {
                    visit(cy, cx - 1);
                }
                if cx + 1 < w {
                    visit(cy, cx + 1);
                }
            }
            if best.is_none_or(|(s, _)| size > s) {
                best = Some((size, b));
            }
        }
    }
    best.map(|(_, b)| b)
}

/// Intersection over union of two continuous boxes.
pub fn box_iou(a: &Bbox, b: &Bbox) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

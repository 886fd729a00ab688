//! Heatmap overlays for localization maps.
//!
//! Rendering is fixed so overlays are reproducible byte for byte: the map
//! goes through [`colormap`] (a piecewise-linear blue, cyan, yellow, red
//! ramp) and is blended over the image with weight [`OVERLAY_ALPHA`]. The
//! extracted box is a one pixel outline in [`BOX_COLOR`].

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::metrics::{mask_to_box, threshold_map, PixelBox};

/// Weight of the heatmap colour in the blend.
pub const OVERLAY_ALPHA: f64 = 0.5;
pub const BOX_COLOR: [u8; 3] = [0, 255, 0];

const RAMP: [(f64, [f64; 3]); 4] = [
    (0.0, [0.0, 0.0, 1.0]),
    (1.0 / 3.0, [0.0, 1.0, 1.0]),
    (2.0 / 3.0, [1.0, 1.0, 0.0]),
    (1.0, [1.0, 0.0, 0.0]),
];

/// Colour of a map value, clamped to `[0, 1]`.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    for w in RAMP.windows(2) {
        let ((a, ca), (b, cb)) = (w[0], w[1]);
        if v <= b {
            let t = (v - a) / (b - a);
            return [0, 1, 2].map(|i| ca[i] + t * (cb[i] - ca[i]));
        }
    }
    RAMP[3].1
}

/// Box drawn for `map` at threshold `tau`. A map without variation carries
/// no localization signal and gets no box.
pub fn overlay_box(map: ArrayView2<f64>, tau: f64) -> Option<PixelBox> {
    let (lo, hi) = map
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return None;
    }
    mask_to_box(threshold_map(map, tau).view())
}

/// Blend the coloured map over `image` and outline the box at `tau`.
pub fn render_overlay(image: &RgbImage, map: ArrayView2<f64>, tau: f64) -> Result<RgbImage> {
    let (h, w) = map.dim();
    if (image.height() as usize, image.width() as usize) != (h, w) {
        return Err(Error::Input(format!(
            "map is {h}x{w}, image is {}x{}",
            image.height(),
            image.width()
        )));
    }
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let c = colormap(map[[y as usize, x as usize]]);
        for i in 0..3 {
            let v = (1.0 - OVERLAY_ALPHA) * px.0[i] as f64 / 255.0 + OVERLAY_ALPHA * c[i];
            px.0[i] = (v * 255.0).round() as u8;
        }
    }
    if let Some(b) = overlay_box(map, tau) {
        let color = Rgb(BOX_COLOR);
        for x in b.x0..=b.x1 {
            out.put_pixel(x as u32, b.y0 as u32, color);
            out.put_pixel(x as u32, b.y1 as u32, color);
        }
        for y in b.y0..=b.y1 {
            out.put_pixel(b.x0 as u32, y as u32, color);
            out.put_pixel(b.x1 as u32, y as u32, color);
        }
    }
    Ok(out)
}

/// Output path for the overlay of image `id`.
pub fn overlay_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_overlay.png"))
}

pub fn save_overlay(dir: &Path, id: &str, overlay: &RgbImage) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = overlay_path(dir, id);
    overlay
        .save(&path)
        .map_err(|source| Error::Image { path: path.clone(), source })?;
    Ok(path)
}

//! Shapes on textured backgrounds, one object per image.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::RgbImage;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::write_mask;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Ring,
    Cross,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Ring, Shape::Cross];

    /// Membership test in the shape's own frame, where the shape fits the unit disc.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Circle => u * u + v * v <= 1.0,
            Shape::Square => u.abs() <= 0.7 && v.abs() <= 0.7,
            Shape::Triangle => [-90f64, 30.0, 150.0].iter().all(|a| {
                let a = a.to_radians();
                u * a.cos() + v * a.sin() <= 0.5
            }),
            Shape::Ring => {
                let r2 = u * u + v * v;
                (0.3..=1.0).contains(&r2)
            }
            Shape::Cross => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        }
    }
}

/// How object and background colours are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Palette {
    /// Background channels in `[0, 0.35)`, object channels in `[0.65, 1)`.
    BrightOnDark,
    /// Both colours uniform, with at least 0.3 difference in some channel.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    /// Uses the first `num_classes` of circle, square, triangle, ring, cross.
    pub num_classes: usize,
    pub image_size: usize,
    /// Half-width of the uniform per-pixel texture noise.
    pub noise: f64,
    /// Object radius as a fraction of the image side.
    pub scale_range: (f64, f64),
    pub palette: Palette,
    /// Rotate each shape by a uniform angle.
    pub rotate: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_images: 2000,
            val_images: 0,
            test_images: 300,
            num_classes: 3,
            image_size: 96,
            noise: 0.2,
            scale_range: (0.3, 0.45),
            palette: Palette::BrightOnDark,
            rotate: false,
            seed: 0,
        }
    }
}

/// Keys accepted by [`SyntheticSpec::apply_overrides`].
pub const SYNTHETIC_KEYS: &[&str] = &[
    "train_images",
    "val_images",
    "test_images",
    "num_classes",
    "image_size",
    "noise",
    "scale_min",
    "scale_max",
    "palette",
    "rotate",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::validation(key, format!("cannot parse `{value}`")))
}

impl SyntheticSpec {
    /// Apply `key=value` overrides, then validate.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::validation(o, "expected key=value"))?;
            let key = key.trim();
            match key {
                "train_images" => self.train_images = parse(key, value)?,
                "val_images" => self.val_images = parse(key, value)?,
                "test_images" => self.test_images = parse(key, value)?,
                "num_classes" => self.num_classes = parse(key, value)?,
                "image_size" => self.image_size = parse(key, value)?,
                "noise" => self.noise = parse(key, value)?,
                "scale_min" => self.scale_range.0 = parse(key, value)?,
                "scale_max" => self.scale_range.1 = parse(key, value)?,
                "palette" => {
                    self.palette = match value.trim() {
                        "bright-on-dark" => Palette::BrightOnDark,
                        "random" => Palette::Random,
                        _ => return Err(Error::validation(key, "expected bright-on-dark or random")),
                    }
                }
                "rotate" => self.rotate = parse(key, value)?,
                "seed" => self.seed = parse(key, value)?,
                _ => return Err(Error::validation(key, "unknown synthetic key")),
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > Shape::ALL.len() {
            return Err(Error::validation("num_classes", format!("must be in 1..={}", Shape::ALL.len())));
        }
        if self.image_size < 8 {
            return Err(Error::validation("image_size", "must be at least 8"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi < 0.5) {
            return Err(Error::validation("scale_range", "need 0 < min <= max < 0.5"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::validation("noise", "must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub class: usize,
    pub image: RgbImage,
    pub mask: Array2<bool>,
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Draw one image of a uniformly chosen class.
pub fn render_sample<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> SyntheticSample {
    let size = spec.image_size;
    let class = rng.random_range(0..spec.num_classes);
    let shape = Shape::ALL[class];
    let (background, object) = match spec.palette {
        Palette::BrightOnDark => {
            let bg = random_color(rng).map(|v| v * 0.35);
            (bg, random_color(rng).map(|v| 0.65 + v * 0.35))
        }
        Palette::Random => {
            let bg = random_color(rng);
            let obj = loop {
                let c = random_color(rng);
                if (0..3).map(|i| (c[i] - bg[i]).abs()).fold(0.0, f64::max) >= 0.3 {
                    break c;
                }
            };
            (bg, obj)
        }
    };
    let radius = rng.random_range(spec.scale_range.0..=spec.scale_range.1) * size as f64;
    let cx = rng.random_range(radius..=size as f64 - radius);
    let cy = rng.random_range(radius..=size as f64 - radius);
    let angle = if spec.rotate { rng.random_range(0.0..std::f64::consts::TAU) } else { 0.0 };
    let (sin, cos) = angle.sin_cos();

    let mut mask = Array2::from_elem((size, size), false);
    let mut image = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 + 0.5 - cx) / radius;
            let dy = (y as f64 + 0.5 - cy) / radius;
            let inside = shape.contains(cos * dx + sin * dy, -sin * dx + cos * dy);
            mask[[y, x]] = inside;
            let base = if inside { object } else { background };
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = base[c] + rng.random_range(-1.0..=1.0) * spec.noise;
                px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            image.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    SyntheticSample { class, image, mask }
}

/// Tight continuous box `(x0, y0, x1, y1)` around every foreground pixel.
pub(crate) fn tight_box(mask: &Array2<bool>) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for ((y, x), &on) in mask.indexed_iter() {
        if on {
            b = Some(match b {
                None => (x, y, x + 1, y + 1),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
            });
        }
    }
    b
}

/// Per-split class counts of a generated dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub splits: Vec<(String, Vec<usize>)>,
}

/// Write `train` (labels only) and `val`/`test` (labels, boxes, masks) under `out`.
/// Each split draws from its own stream, so split sizes do not affect each other.
pub fn generate_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<SyntheticSummary> {
    spec.validate()?;
    let mut summary = SyntheticSummary { splits: Vec::new() };
    let splits = [("train", spec.train_images, 0u64), ("val", spec.val_images, 1), ("test", spec.test_images, 2)];
    for (name, count, idx) in splits {
        if count == 0 {
            continue;
        }
        let annotated = name != "train";
        let dir = out.join(name);
        for sub in ["images", "masks"].iter().take(if annotated { 2 } else { 1 }) {
            fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
        }
        let mut rng = stream_rng(spec.seed, streams::SYNTHETIC * 100 + idx);
        let mut labels = String::from("id,class\n");
        let mut boxes = String::from("id,class,x0,y0,x1,y1\n");
        let mut counts = vec![0; spec.num_classes];
        for i in 0..count {
            let id = format!("{i:05}");
            let sample = render_sample(spec, &mut rng);
            counts[sample.class] += 1;
            let path = dir.join("images").join(format!("{id}.png"));
            sample
                .image
                .save(&path)
                .map_err(|source| Error::Image { path: path.clone(), source })?;
            let _ = writeln!(labels, "{id},{}", sample.class);
            if annotated {
                write_mask(&dir.join("masks").join(format!("{id}.png")), &sample.mask)?;
                let (x0, y0, x1, y1) = tight_box(&sample.mask).expect("shapes are never empty");
                let _ = writeln!(boxes, "{id},{},{x0},{y0},{x1},{y1}", sample.class);
            }
        }
        let p = dir.join("labels.csv");
        fs::write(&p, labels).map_err(|e| Error::io(&p, e))?;
        if annotated {
            let p = dir.join("boxes.csv");
            fs::write(&p, boxes).map_err(|e| Error::io(&p, e))?;
        }
        summary.splits.push((name.to_string(), counts));
    }
    Ok(summary)
}

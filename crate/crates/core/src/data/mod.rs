//! Dataset folders, the synthetic shapes generator, and training augmentations.
//!
//! Layout of one split:
//!
//! ```text
//! <root>/<split>/images/<id>.png   8-bit RGB
//! <root>/<split>/labels.csv        id,class
//! <root>/<split>/boxes.csv         id,class,x0,y0,x1,y1   (evaluation splits)
//! <root>/<split>/masks/<id>.png    8-bit gray, 0 = background, 255 = object
//! ```
//!
//! Box coordinates are continuous pixel coordinates: the pixel at column `x`
//! spans `[x, x+1)`.

mod augment;
mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};

pub use augment::{cutmix_augment, cutmix_with_region, has_augment, CutRegion, Mixed};
pub use synthetic::{generate_synthetic, render_sample, Palette, Shape, SYNTHETIC_KEYS, SyntheticSample, SyntheticSpec, SyntheticSummary};

use crate::annotation::{Bbox, ClassBox, ClassMask, ClassPixelMask, PixelAnnotation};
use crate::error::{Error, Result};

/// Whether a split is used for training (labels only) or evaluation
/// (pixel-level annotations required).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Eval,
}

impl SplitRole {
    /// `train` is the training split; every other name is evaluated.
    pub fn for_split(split: &str) -> SplitRole {
        if split == "train" {
            SplitRole::Train
        } else {
            SplitRole::Eval
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub mask: ClassMask,
    boxes: Vec<ClassBox>,
    mask_path: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn has_annotation(&self) -> bool {
        !self.boxes.is_empty() || self.mask_path.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: String,
    pub role: SplitRole,
    pub num_classes: usize,
    pub entries: Vec<ManifestEntry>,
}

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    lines.next(); // header
    Ok(lines
        .map(|l| l.split(',').map(|c| c.trim().to_string()).collect())
        .collect())
}

fn parse_field<T: std::str::FromStr>(path: &Path, row: usize, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Dataset(format!("{}: row {row}: cannot parse `{value}`", path.display())))
}

/// Read and validate one split. Entries are ordered by image id.
pub fn load_manifest(root: &Path, split: &str, role: SplitRole, num_classes: usize) -> Result<DatasetManifest> {
    let dir = root.join(split);
    let labels_path = dir.join("labels.csv");
    if !labels_path.exists() {
        return Err(Error::Dataset(format!("{} not found", labels_path.display())));
    }
    let mut labels = BTreeMap::new();
    for (i, row) in read_csv(&labels_path)?.into_iter().enumerate() {
        if row.len() != 2 {
            return Err(Error::Dataset(format!("{}: row {} needs id,class", labels_path.display(), i + 1)));
        }
        let class: usize = parse_field(&labels_path, i + 1, &row[1])?;
        if class >= num_classes {
            return Err(Error::Dataset(format!(
                "{}: class {class} out of range for {num_classes} classes",
                labels_path.display()
            )));
        }
        labels.insert(row[0].clone(), class);
    }
    if labels.is_empty() {
        return Err(Error::Dataset(format!("split {} has no images", dir.display())));
    }

    let mut boxes: BTreeMap<String, Vec<ClassBox>> = BTreeMap::new();
    if role == SplitRole::Eval {
        let boxes_path = dir.join("boxes.csv");
        if boxes_path.exists() {
            for (i, row) in read_csv(&boxes_path)?.into_iter().enumerate() {
                if row.len() != 6 {
                    return Err(Error::Dataset(format!("{}: row {} needs 6 fields", boxes_path.display(), i + 1)));
                }
                let f = |j: usize| parse_field::<f64>(&boxes_path, i + 1, &row[j]);
                let bbox = Bbox::new(f(2)?, f(3)?, f(4)?, f(5)?);
                let class: usize = parse_field(&boxes_path, i + 1, &row[1])?;
                boxes.entry(row[0].clone()).or_default().push(ClassBox { class, bbox });
            }
        }
    }

    let mut entries = Vec::with_capacity(labels.len());
    for (id, class) in labels {
        let image_path = dir.join("images").join(format!("{id}.png"));
        if !image_path.exists() {
            return Err(Error::Dataset(format!("missing image {}", image_path.display())));
        }
        let (entry_boxes, mask_path) = match role {
            SplitRole::Train => (Vec::new(), None),
            SplitRole::Eval => {
                let mp = dir.join("masks").join(format!("{id}.png"));
                let mask_path = mp.exists().then_some(mp);
                let b = boxes.remove(&id).unwrap_or_default();
                if b.is_empty() && mask_path.is_none() {
                    return Err(Error::Dataset(format!("evaluation image {id} has no box or mask")));
                }
                (b, mask_path)
            }
        };
        entries.push(ManifestEntry {
            mask: ClassMask::one_hot(class, num_classes)?,
            id,
            image_path,
            boxes: entry_boxes,
            mask_path,
        });
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        split: split.to_string(),
        role,
        num_classes,
        entries,
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|im| im.to_rgb8())
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    let im = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .to_luma8();
    let (w, h) = im.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| im.get_pixel(x as u32, y as u32)[0] >= 128))
}

pub fn write_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    let (h, w) = mask.dim();
    let im = GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([if mask[[y as usize, x as usize]] { 255 } else { 0 }]));
    im.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// `3 x H x W` tensor with values in `[0, 1]`.
pub fn to_tensor(im: &RgbImage) -> Array3<f32> {
    let (w, h) = im.dimensions();
    let raw = im.as_raw();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| raw[(y * w as usize + x) * 3 + c] as f32 / 255.0)
}

pub fn from_tensor(t: &Array3<f32>) -> RgbImage {
    let (_, h, w) = t.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (t[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Images and image-level labels only. Built without touching any
/// pixel-level annotation file.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub ids: Vec<String>,
    pub images: Vec<RgbImage>,
    pub masks: Vec<ClassMask>,
}

impl TrainingSet {
    pub fn load(manifest: &DatasetManifest, image_size: usize) -> Result<TrainingSet> {
        let mut set = TrainingSet {
            ids: Vec::new(),
            images: Vec::new(),
            masks: Vec::new(),
        };
        for e in &manifest.entries {
            let im = read_rgb(&e.image_path)?;
            check_size(&e.image_path, &im, image_size)?;
            set.ids.push(e.id.clone());
            set.images.push(im);
            set.masks.push(e.mask.clone());
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn check_size(path: &Path, im: &RgbImage, size: usize) -> Result<()> {
    let (w, h) = im.dimensions();
    if w as usize != size || h as usize != size {
        return Err(Error::Input(format!("{} is {w}x{h}, expected {size}x{size}", path.display())));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub image: RgbImage,
    pub mask: ClassMask,
    pub annotation: PixelAnnotation,
}

/// Images with their pixel-level ground truth.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub samples: Vec<EvalSample>,
}

impl EvalSet {
    pub fn load(manifest: &DatasetManifest, image_size: usize) -> Result<EvalSet> {
        if manifest.role != SplitRole::Eval {
            return Err(Error::Dataset(format!("split {} is not an evaluation split", manifest.split)));
        }
        let mut samples = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let image = read_rgb(&e.image_path)?;
            check_size(&e.image_path, &image, image_size)?;
            let mut annotation = PixelAnnotation {
                boxes: e.boxes.clone(),
                masks: Vec::new(),
            };
            if let Some(p) = &e.mask_path {
                annotation.masks.push(ClassPixelMask {
                    class: e.mask.dominant_class(),
                    mask: read_mask(p)?,
                });
            }
            annotation.validate(image_size, image_size)?;
            samples.push(EvalSample {
                id: e.id.clone(),
                image,
                mask: e.mask.clone(),
                annotation,
            });
        }
        Ok(EvalSet { samples })
    }
}

//! Image-level labels and pixel-level ground truth.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image-level classification mask `y` with its dominant class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMask {
    y: Vec<u8>,
    dominant: usize,
}

impl ClassMask {
    pub fn new(y: Vec<u8>) -> Result<ClassMask> {
        if y.iter().any(|&v| v > 1) {
            return Err(Error::Input("class mask entries must be 0 or 1".into()));
        }
        // first maximum wins ties
        let dominant = y
            .iter()
            .position(|&v| v == 1)
            .ok_or_else(|| Error::Input("class mask has no positive entry".into()))?;
        Ok(ClassMask { y, dominant })
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<ClassMask> {
        if class >= num_classes {
            return Err(Error::Input(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        let mut y = vec![0; num_classes];
        y[class] = 1;
        ClassMask::new(y)
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn num_classes(&self) -> usize {
        self.y.len()
    }

    /// `argmax(y)`, lowest index on ties.
    pub fn dominant_class(&self) -> usize {
        self.dominant
    }
}

/// Axis-aligned box in continuous pixel coordinates. A pixel at column `x`
/// covers `[x, x + 1)`, so the tight box of a single pixel is `(x, y, x+1, y+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Bbox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Bbox {
        Bbox { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBox {
    pub class: usize,
    pub bbox: Bbox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPixelMask {
    pub class: usize,
    /// `height x width`, true on the object.
    pub mask: Array2<bool>,
}

/// Pixel-level ground truth. Only evaluation code reads it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PixelAnnotation {
    pub boxes: Vec<ClassBox>,
    pub masks: Vec<ClassPixelMask>,
}

impl PixelAnnotation {
    /// Check boxes lie within, and masks match, an image of the given size.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for b in &self.boxes {
            let r = b.bbox;
            if !r.is_valid() || r.x0 < 0.0 || r.y0 < 0.0 || r.x1 > width as f64 || r.y1 > height as f64
            {
                return Err(Error::Dataset(format!(
                    "box {r:?} invalid for a {width}x{height} image"
                )));
            }
        }
        for m in &self.masks {
            if m.mask.dim() != (height, width) {
                return Err(Error::Dataset(format!(
                    "mask is {:?}, image is {height}x{width}",
                    m.mask.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn boxes_for(&self, class: usize) -> Vec<Bbox> {
        self.boxes
            .iter()
            .filter(|b| b.class == class)
            .map(|b| b.bbox)
            .collect()
    }

    pub fn mask_for(&self, class: usize) -> Option<&Array2<bool>> {
        self.masks.iter().find(|m| m.class == class).map(|m| &m.mask)
    }
}

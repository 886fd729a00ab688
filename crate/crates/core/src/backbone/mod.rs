//! Feature extractor, global-average-pooling aggregator and the linear score
//! estimator, plus class activation map generation.
//!
//! The extractor runs in `f32`. Everything from the pixel features onward
//! (pooling, the estimator, losses) is `f64`.

mod cam;
mod conv;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use cam::{bilinear_upsample, normalize_min_max};
pub use conv::{out_size, Conv2d, ConvGrads, ConvTrace};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Pixel values arrive in `[0, 1]` and are shifted/scaled by these before the first layer.
pub const PIXEL_MEAN: f32 = 0.5;
pub const PIXEL_STD: f32 = 0.25;

/// Total downsampling factor of the extractor.
pub const STRIDE: usize = 16;

/// Target-domain features `Z`: one column per spatial position.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatureMap {
    /// `C x N`, `N = height * width`.
    pub z: Array2<f64>,
    pub height: usize,
    pub width: usize,
}

impl PixelFeatureMap {
    pub fn new(z: Array2<f64>, height: usize, width: usize) -> Result<Self> {
        if z.ncols() != height * width {
            return Err(Error::Input(format!(
                "feature map has {} columns, expected {height}x{width}",
                z.ncols()
            )));
        }
        Ok(PixelFeatureMap { z, height, width })
    }

    pub fn channels(&self) -> usize {
        self.z.nrows()
    }

    pub fn positions(&self) -> usize {
        self.z.ncols()
    }
}

/// Source-domain feature `z`: the pooled image-level feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceFeature(pub Array1<f64>);

/// Global average pooling over spatial positions.
pub fn aggregate(map: &PixelFeatureMap) -> SourceFeature {
    SourceFeature(
        map.z
            .mean_axis(Axis(1))
            .expect("feature map has at least one position"),
    )
}

/// Linear score estimator `e(x) = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    /// `K x C`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Estimator {
    pub fn new<R: Rng>(num_classes: usize, channels: usize, rng: &mut R) -> Estimator {
        let normal = Normal::new(0.0, 0.01).expect("positive std");
        Estimator {
            weight: Array2::from_shape_simple_fn((num_classes, channels), || normal.sample(rng)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.nrows()
    }

    /// Apply the estimator to every column of a `C x m` matrix.
    pub fn estimate(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.nrows() != self.weight.ncols() {
            return Err(Error::Input(format!(
                "estimator expects {} channels, got {}",
                self.weight.ncols(),
                features.nrows()
            )));
        }
        let mut out = self.weight.dot(&features);
        for mut col in out.axis_iter_mut(Axis(1)) {
            col += &self.bias;
        }
        Ok(out)
    }

    pub fn estimate_one(&self, feature: ArrayView1<f64>) -> Result<Array1<f64>> {
        let col = feature.insert_axis(Axis(1));
        Ok(self.estimate(col)?.column(0).to_owned())
    }
}

/// Per-class raw localization scores on the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    /// `K x N`
    pub scores: Array2<f64>,
    pub height: usize,
    pub width: usize,
}

impl ScoreMap {
    /// Class map bilinearly resized to `out_h x out_w` and min-max normalised.
    pub fn class_map(&self, class: usize, out_h: usize, out_w: usize) -> Array2<f64> {
        let grid = self
            .scores
            .row(class)
            .to_owned()
            .into_shape_with_order((self.height, self.width))
            .expect("score map shape");
        let mut up = bilinear_upsample(grid.view(), out_h, out_w);
        normalize_min_max(&mut up);
        up
    }

    /// All classes at image resolution, each normalised to `[0, 1]`.
    pub fn resized(&self, out_h: usize, out_w: usize) -> Array3<f64> {
        let k = self.scores.nrows();
        let mut out = Array3::zeros((k, out_h, out_w));
        for c in 0..k {
            out.index_axis_mut(Axis(0), c)
                .assign(&self.class_map(c, out_h, out_w));
        }
        out
    }
}

/// Extractor stage layout for a given config: four stride-2 stages followed
/// by one stride-1 stage producing `feature_dim` channels.
pub fn stage_plan(base_width: usize, feature_dim: usize) -> Vec<(usize, usize, usize)> {
    let w = base_width;
    vec![
        (3, w, 2),
        (w, 2 * w, 2),
        (2 * w, 4 * w, 2),
        (4 * w, feature_dim, 2),
        (feature_dim, feature_dim, 1),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extractor {
    pub layers: Vec<Conv2d>,
}

/// Everything the backward pass needs from one image's forward pass.
#[derive(Debug, Clone)]
pub struct ExtractorTrace {
    traces: Vec<ConvTrace>,
}

impl Extractor {
    pub fn new<R: Rng>(base_width: usize, feature_dim: usize, rng: &mut R) -> Extractor {
        let layers = stage_plan(base_width, feature_dim)
            .into_iter()
            .map(|(i, o, s)| Conv2d::new(i, o, s, rng))
            .collect();
        Extractor { layers }
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_ch)
    }

    fn normalized_input(image: ArrayView3<f32>) -> Array2<f32> {
        let (c, h, w) = image.dim();
        image
            .mapv(|v| (v - PIXEL_MEAN) / PIXEL_STD)
            .into_shape_with_order((c, h * w))
            .expect("contiguous image")
    }

    /// Forward one `3 x H x W` image, keeping what backward needs.
    pub fn forward_trace(&self, image: ArrayView3<f32>) -> (PixelFeatureMap, ExtractorTrace) {
        let (_, mut h, mut w) = image.dim();
        let mut traces: Vec<ConvTrace> = Vec::with_capacity(self.layers.len());
        let input = Self::normalized_input(image);
        for layer in &self.layers {
            let x = traces.last().map_or(input.view(), |t| t.output.view());
            let t = layer.forward(x, h, w);
            h = t.out_h;
            w = t.out_w;
            traces.push(t);
        }
        let last = traces.last().expect("at least one layer");
        let z = last.output.mapv(f64::from);
        (
            PixelFeatureMap {
                z,
                height: h,
                width: w,
            },
            ExtractorTrace { traces },
        )
    }

    pub fn forward(&self, image: ArrayView3<f32>) -> PixelFeatureMap {
        self.forward_trace(image).0
    }

    /// Parameter gradients given `dL/dZ` (`C x N`).
    pub fn backward(&self, trace: &ExtractorTrace, grad_z: ArrayView2<f64>) -> Vec<ConvGrads> {
        let mut grad = grad_z.mapv(|v| v as f32);
        let mut out: Vec<ConvGrads> = Vec::with_capacity(self.layers.len());
        for (i, (layer, t)) in self.layers.iter().zip(&trace.traces).enumerate().rev() {
            let (g, dinput) = layer.backward(t, grad, i > 0);
            out.push(g);
            match dinput {
                Some(d) => grad = d,
                None => break,
            }
        }
        out.reverse();
        out
    }
}

/// The full classifier: extractor `f`, GAP `g`, estimator `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub extractor: Extractor,
    pub estimator: Estimator,
    pub image_size: usize,
}

/// Output of a forward pass at inference time.
#[derive(Debug, Clone)]
pub struct Inference {
    pub features: PixelFeatureMap,
    /// Image-level scores `e(g(Z))`.
    pub logits: Array1<f64>,
    pub scores: ScoreMap,
}

impl Inference {
    pub fn predicted_class(&self) -> usize {
        argmax(self.logits.view())
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Model {
    pub fn new<R: Rng>(cfg: &RunConfig, rng: &mut R) -> Model {
        let extractor = Extractor::new(cfg.base_width, cfg.feature_dim, rng);
        let estimator = Estimator::new(cfg.num_classes, cfg.feature_dim, rng);
        Model {
            extractor,
            estimator,
            image_size: cfg.image_size,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.feature_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.estimator.num_classes()
    }

    pub fn check_image(&self, image: ArrayView3<f32>) -> Result<()> {
        let (c, h, w) = image.dim();
        if c != 3 || h != self.image_size || w != self.image_size {
            return Err(Error::Input(format!(
                "expected a 3x{s}x{s} image, got {c}x{h}x{w}",
                s = self.image_size
            )));
        }
        Ok(())
    }

    /// `Z = f(X)` for a batch of images.
    pub fn extract_features(
        &self,
        images: &[Array3<f32>],
        exec: Exec,
    ) -> Result<Vec<PixelFeatureMap>> {
        for im in images {
            self.check_image(im.view())?;
        }
        Ok(par::map(exec, images, |im| self.extractor.forward(im.view())))
    }

    pub fn infer(&self, image: ArrayView3<f32>) -> Result<Inference> {
        self.check_image(image)?;
        let features = self.extractor.forward(image);
        let z = aggregate(&features);
        let logits = self.estimator.estimate_one(z.0.view())?;
        let scores = self.estimator.estimate(features.z.view())?;
        let scores = ScoreMap {
            scores,
            height: features.height,
            width: features.width,
        };
        Ok(Inference {
            features,
            logits,
            scores,
        })
    }

    /// `K x H x W` localization maps, each class normalised to `[0, 1]`.
    pub fn generate_cam(&self, image: ArrayView3<f32>) -> Result<Array3<f64>> {
        let inf = self.infer(image)?;
        let (_, h, w) = image.dim();
        Ok(inf.scores.resized(h, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use ndarray::array;

    #[test]
    fn aggregate_is_spatial_mean() {
        let map = PixelFeatureMap::new(array![[1.0, 3.0], [2.0, 2.0]], 1, 2).unwrap();
        assert_eq!(aggregate(&map).0, array![2.0, 2.0]);

        let map = PixelFeatureMap::new(Array2::from_elem((3, 6), 0.7), 2, 3).unwrap();
        for v in aggregate(&map).0.iter() {
            assert!((v - 0.7).abs() < 1e-15);
        }

        let map = PixelFeatureMap::new(array![[4.0], [-1.0]], 1, 1).unwrap();
        assert_eq!(aggregate(&map).0, array![4.0, -1.0]);
    }

    #[test]
    fn feature_map_shape_checked() {
        assert!(PixelFeatureMap::new(Array2::zeros((2, 5)), 2, 3).is_err());
    }

    #[test]
    fn identity_estimator() {
        let est = Estimator {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let z = array![0.5, -1.0, 2.0];
        assert_eq!(est.estimate_one(z.view()).unwrap(), z);
    }

    #[test]
    fn zero_weight_estimator_returns_bias() {
        let est = Estimator {
            weight: Array2::zeros((2, 4)),
            bias: array![0.3, -0.7],
        };
        let out = est.estimate(Array2::from_elem((4, 5), 9.0).view()).unwrap();
        for col in out.columns() {
            assert_eq!(col, array![0.3, -0.7]);
        }
    }

    #[test]
    fn estimator_dim_mismatch() {
        let est = Estimator::new(2, 4, &mut seeded_rng(0));
        assert!(matches!(
            est.estimate(Array2::zeros((3, 2)).view()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn estimate_commutes_with_pooling() {
        let mut rng = seeded_rng(42);
        for _ in 0..20 {
            let est = Estimator {
                weight: Array2::from_shape_simple_fn((4, 6), || rng.random_range(-1.0..1.0)),
                bias: Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0)),
            };
            let z = Array2::from_shape_simple_fn((6, 4), || rng.random_range(-2.0..2.0));
            let map = PixelFeatureMap::new(z, 2, 2).unwrap();
            let pooled = est.estimate_one(aggregate(&map).0.view()).unwrap();
            let mean_scores = est.estimate(map.z.view()).unwrap().mean_axis(Axis(1)).unwrap();
            for (a, b) in pooled.iter().zip(mean_scores.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    fn small_cfg(size: usize) -> RunConfig {
        RunConfig {
            image_size: size,
            base_width: 4,
            feature_dim: 8,
            ..RunConfig::default()
        }
    }

    #[test]
    fn stride_sixteen_grid() {
        let model = Model::new(&small_cfg(224), &mut seeded_rng(1));
        let image = Array3::<f32>::zeros((3, 224, 224));
        let map = model.extractor.forward(image.view());
        assert_eq!((map.height, map.width, map.positions()), (14, 14, 196));
        assert!(map.z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batch_is_deterministic_and_checked() {
        let model = Model::new(&small_cfg(32), &mut seeded_rng(2));
        let mut rng = seeded_rng(3);
        let im = Array3::from_shape_simple_fn((3, 32, 32), || rng.random_range(0.0f32..1.0));
        let maps = model
            .extract_features(&[im.clone(), im.clone()], Exec::Parallel)
            .unwrap();
        assert_eq!(maps[0], maps[1]);
        let bad = Array3::<f32>::zeros((3, 32, 16));
        assert!(matches!(
            model.extract_features(&[bad], Exec::Sequential),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn constant_features_give_zero_cam() {
        let mut model = Model::new(&small_cfg(32), &mut seeded_rng(4));
        // zero every weight so Z is constant (bias only)
        for l in &mut model.extractor.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.5);
        }
        let im = Array3::<f32>::zeros((3, 32, 32));
        let cam = model.generate_cam(im.view()).unwrap();
        assert_eq!(cam.dim(), (3, 32, 32));
        assert!(cam.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extractor_backward_matches_finite_differences() {
        let cfg = small_cfg(32);
        let model = Model::new(&cfg, &mut seeded_rng(8));
        let mut rng = seeded_rng(9);
        let im = Array3::from_shape_simple_fn((3, 32, 32), || rng.random_range(0.0f32..1.0));
        let (map, trace) = model.extractor.forward_trace(im.view());
        let up = Array2::from_shape_simple_fn(map.z.raw_dim(), || rng.random_range(-1.0..1.0));
        let grads = model.extractor.backward(&trace, up.view());
        let loss = |m: &Extractor| -> f64 {
            let z = m.forward(im.view()).z;
            (&z * &up).sum()
        };
        let eps = 1e-2f32;
        for (li, wi) in [(0usize, 5usize), (2, 17), (4, 3)] {
            let cols = model.extractor.layers[li].weight.ncols();
            let (r, c) = (wi / cols, wi % cols);
            let mut p = model.extractor.clone();
            p.layers[li].weight[[r, c]] += eps;
            let mut m = model.extractor.clone();
            m.layers[li].weight[[r, c]] -= eps;
            let fd = (loss(&p) - loss(&m)) / (2.0 * eps as f64);
            let an = grads[li].weight[[r, c]] as f64;
            assert!(
                (fd - an).abs() < 2e-2 * (1.0 + an.abs()),
                "layer {li}: fd {fd} analytic {an}"
            );
        }
    }
}

//! Target sample assigner.
//!
//! Keeps a cache of anchors (one Universum anchor, one true-target anchor per
//! class), splits each image's pixel features into Universum / true-target /
//! fake-target clusters with a three-way k-means seeded by
//! `{universum anchor, class anchor, z}`, samples up to `n` features per
//! cluster, and folds the final cluster centres back into the cache.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::ClassMask;
use crate::backbone::{PixelFeatureMap, SourceFeature};
use crate::error::{Error, Result};

pub const UNIVERSUM: u8 = 0;
pub const TRUE_TARGET: u8 = 1;
pub const FAKE_TARGET: u8 = 2;

/// How cluster centres are blended into cached anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateRule {
    /// `new = (1 - r) * old + r * center`, `r = 1 / (updates + 1)`: the cached
    /// anchor is the running mean of every centre it has absorbed.
    RunningMean,
    /// `new = r * old + (1 - r) * center` with the same `r`.
    Literal,
}

impl UpdateRule {
    pub fn from_literal_flag(literal: bool) -> Self {
        if literal {
            UpdateRule::Literal
        } else {
            UpdateRule::RunningMean
        }
    }

    /// Blend `old` and `center` with update ratio `r`.
    pub fn blend(self, old: ArrayView1<f64>, center: ArrayView1<f64>, r: f64) -> Array1<f64> {
        match self {
            UpdateRule::RunningMean => &old * (1.0 - r) + &center * r,
            UpdateRule::Literal => &old * r + &center * (1.0 - r),
        }
    }
}

/// Anchor cache `M` (`C x (K+1)`). Column 0 is the Universum anchor and
/// column `k + 1` the true-target anchor of class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorCache {
    pub m: Array2<f64>,
    /// Completed updates per class column.
    pub seen_count: Vec<u64>,
    /// Completed updates of the Universum column.
    pub universum_updates: u64,
    /// Class columns that have been seeded with `z + eps`.
    pub initialized: Vec<bool>,
    pub epsilon_scale: f64,
}

impl AnchorCache {
    pub fn new(channels: usize, num_classes: usize, epsilon_scale: f64) -> AnchorCache {
        AnchorCache {
            m: Array2::zeros((channels, num_classes + 1)),
            seen_count: vec![0; num_classes],
            universum_updates: 0,
            initialized: vec![false; num_classes],
            epsilon_scale,
        }
    }

    pub fn channels(&self) -> usize {
        self.m.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.seen_count.len()
    }

    fn check(&self, mask: &ClassMask, z: &SourceFeature) -> Result<()> {
        if mask.num_classes() != self.num_classes() || z.0.len() != self.channels() {
            return Err(Error::Input(format!(
                "cache is {}x{} classes, got mask of {} and feature of {}",
                self.channels(),
                self.num_classes(),
                mask.num_classes(),
                z.0.len()
            )));
        }
        Ok(())
    }

    /// Universum and true-target anchors for the image's dominant class. A
    /// class seen for the first time has its anchor seeded at `z + eps`, with
    /// `eps` uniform in `[-epsilon_scale, epsilon_scale]` per channel.
    pub fn get_anchors<R: Rng>(
        &mut self,
        mask: &ClassMask,
        z: &SourceFeature,
        rng: &mut R,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        self.check(mask, z)?;
        let k = mask.dominant_class();
        if self.seen_count[k] == 0 && !self.initialized[k] {
            let e = self.epsilon_scale;
            let seeded = z.0.mapv(|v| v + rng.random_range(-e..=e));
            self.m.column_mut(k + 1).assign(&seeded);
            self.initialized[k] = true;
        }
        Ok((self.m.column(0).to_owned(), self.m.column(k + 1).to_owned()))
    }

    /// Fold one image's final cluster centres (`C x 3`) into the cache.
    pub fn update(
        &mut self,
        centers: ArrayView2<f64>,
        z: &SourceFeature,
        mask: &ClassMask,
        rule: UpdateRule,
    ) -> Result<()> {
        self.check(mask, z)?;
        if centers.dim() != (self.channels(), 3) {
            return Err(Error::Input(format!(
                "expected {}x3 centres, got {:?}",
                self.channels(),
                centers.dim()
            )));
        }
        let k = mask.dominant_class();

        let r0 = 1.0 / (self.universum_updates + 1) as f64;
        let u = rule.blend(self.m.column(0), centers.column(0), r0);
        self.m.column_mut(0).assign(&u);
        self.universum_updates += 1;

        let col = if self.seen_count[k] > 0 {
            let rk = 1.0 / (self.seen_count[k] + 1) as f64;
            rule.blend(self.m.column(k + 1), centers.column(1), rk)
        } else {
            let d1 = distance(centers.column(1), z.0.view());
            let d2 = distance(centers.column(2), z.0.view());
            if d2 <= d1 {
                centers.column(1).to_owned()
            } else {
                centers.column(2).to_owned()
            }
        };
        self.m.column_mut(k + 1).assign(&col);
        self.seen_count[k] += 1;
        self.initialized[k] = true;
        Ok(())
    }

    /// CSV dump: `column,role,count,v0,...`.
    pub fn to_csv(&self) -> String {
        let c = self.channels();
        let mut out = String::from("column,role,count");
        for i in 0..c {
            out.push_str(&format!(",v{i}"));
        }
        out.push('\n');
        for col in 0..self.m.ncols() {
            let (role, count) = if col == 0 {
                ("universum".to_string(), self.universum_updates)
            } else {
                (format!("class{}", col - 1), self.seen_count[col - 1])
            };
            out.push_str(&format!("{col},{role},{count}"));
            for v in self.m.column(col) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn sq_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    sq_distance(a, b).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop when the largest centre shift is below `tol * (1 + largest centre norm)`.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iters: 50,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index per point.
    pub labels: Vec<u8>,
    /// `C x 3`
    pub centers: Array2<f64>,
    /// Sum of squared distances after each assignment step, final one last.
    pub objective: Vec<f64>,
    /// Lloyd iterations run (assignment + update).
    pub iterations: usize,
}

fn assign(points: ArrayView2<f64>, centers: ArrayView2<f64>, labels: &mut [u8]) -> f64 {
    let mut total = 0.0;
    for (i, p) in points.axis_iter(Axis(1)).enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (j, c) in centers.axis_iter(Axis(1)).enumerate() {
            let d = sq_distance(p, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        labels[i] = best as u8;
        total += best_d;
    }
    total
}

/// Lloyd's k-means with `k = 3` from fixed initial centres.
///
/// `points` is `C x N` (one column per point). Ties go to the lowest cluster
/// index. A cluster left empty is moved onto the point farthest from its
/// previous centre.
pub fn kmeans3(
    points: ArrayView2<f64>,
    init: ArrayView2<f64>,
    params: KMeansParams,
) -> Result<KMeansResult> {
    let (c, n) = points.dim();
    if n < 3 {
        return Err(Error::Degenerate(format!("k-means with 3 clusters needs 3 points, got {n}")));
    }
    if init.dim() != (c, 3) {
        return Err(Error::Input(format!("expected {c}x3 initial centres, got {:?}", init.dim())));
    }
    let mut centers = init.to_owned();
    let mut labels = vec![0u8; n];
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..params.max_iters {
        objective.push(assign(points, centers.view(), &mut labels));
        iterations += 1;

        let mut sums = Array2::<f64>::zeros((c, 3));
        let mut counts = [0usize; 3];
        for (i, p) in points.axis_iter(Axis(1)).enumerate() {
            let l = labels[i] as usize;
            counts[l] += 1;
            let mut col = sums.column_mut(l);
            col += &p;
        }
        let mut next = centers.clone();
        for j in 0..3 {
            if counts[j] > 0 {
                next.column_mut(j).assign(&(&sums.column(j) / counts[j] as f64));
            } else {
                let prev = centers.column(j);
                let mut far = 0usize;
                let mut far_d = f64::NEG_INFINITY;
                for (i, p) in points.axis_iter(Axis(1)).enumerate() {
                    let d = sq_distance(p, prev);
                    if d > far_d {
                        far_d = d;
                        far = i;
                    }
                }
                next.column_mut(j).assign(&points.column(far));
            }
        }
        let mut shift: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..3 {
            shift = shift.max(distance(next.column(j), centers.column(j)));
            scale = scale.max(centers.column(j).dot(&centers.column(j)).sqrt());
        }
        centers = next;
        if shift <= params.tol * (1.0 + scale) {
            break;
        }
    }
    objective.push(assign(points, centers.view(), &mut labels));
    Ok(KMeansResult {
        labels,
        centers,
        objective,
        iterations,
    })
}

/// The three sampled target subsets of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSample {
    /// Cluster label per spatial position.
    pub labels: Vec<u8>,
    /// Sampled position indices per subset, indexed by cluster label.
    pub indices: [Vec<usize>; 3],
    /// Sampled feature vectors, one row per sample, same order as `indices`.
    pub vectors: [Array2<f64>; 3],
    /// Final k-means centres (`C x 3`), used to update the cache.
    pub centers: Array2<f64>,
}

impl SubsetSample {
    pub fn universum(&self) -> ArrayView2<'_, f64> {
        self.vectors[UNIVERSUM as usize].view()
    }
    pub fn true_target(&self) -> ArrayView2<'_, f64> {
        self.vectors[TRUE_TARGET as usize].view()
    }
    pub fn fake_target(&self) -> ArrayView2<'_, f64> {
        self.vectors[FAKE_TARGET as usize].view()
    }

    pub fn cluster_sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

/// Gather the listed columns of `z` as rows.
pub fn gather_rows(z: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), z.nrows()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&z.column(i));
    }
    out
}

/// Cluster one image's features from explicit anchors and sample up to `n`
/// positions per cluster, uniformly without replacement.
pub fn sample_subsets<R: Rng>(
    map: &PixelFeatureMap,
    anchors: (ArrayView1<f64>, ArrayView1<f64>),
    z: &SourceFeature,
    n: usize,
    params: KMeansParams,
    rng: &mut R,
) -> Result<SubsetSample> {
    let c = map.channels();
    let mut init = Array2::zeros((c, 3));
    init.column_mut(0).assign(&anchors.0);
    init.column_mut(1).assign(&anchors.1);
    init.column_mut(2).assign(&z.0);
    let km = kmeans3(map.z.view(), init.view(), params)?;

    let mut members: [Vec<usize>; 3] = Default::default();
    for (i, &l) in km.labels.iter().enumerate() {
        members[l as usize].push(i);
    }
    let indices = members.map(|m| {
        let take = n.min(m.len());
        let mut picked: Vec<usize> = index::sample(rng, m.len(), take)
            .into_iter()
            .map(|j| m[j])
            .collect();
        picked.sort_unstable();
        picked
    });
    let vectors = [
        gather_rows(map.z.view(), &indices[0]),
        gather_rows(map.z.view(), &indices[1]),
        gather_rows(map.z.view(), &indices[2]),
    ];
    Ok(SubsetSample {
        labels: km.labels,
        indices,
        vectors,
        centers: km.centers,
    })
}

/// Fetch anchors for the image's class, then cluster and sample.
pub fn assign_and_sample<R: Rng>(
    map: &PixelFeatureMap,
    z: &SourceFeature,
    cache: &mut AnchorCache,
    mask: &ClassMask,
    n: usize,
    params: KMeansParams,
    rng: &mut R,
) -> Result<SubsetSample> {
    let (au, at) = cache.get_anchors(mask, z, rng)?;
    sample_subsets(map, (au.view(), at.view()), z, n, params, rng)
}

/// Sample `n` positions uniformly from all of `map`, for training without the assigner.
pub fn sample_uniform<R: Rng>(map: &PixelFeatureMap, n: usize, rng: &mut R) -> (Vec<usize>, Array2<f64>) {
    let total = map.positions();
    let mut idx: Vec<usize> = index::sample(rng, total, n.min(total)).into_vec();
    idx.sort_unstable();
    let rows = gather_rows(map.z.view(), &idx);
    (idx, rows)
}

//! Localization metrics over threshold sweeps of normalised score maps.
//!
//! Box metrics extract the tight box of the largest 4-connected foreground
//! component at each threshold. Pixel metrics pool pixel counts over every
//! image before computing precision, recall and IoU.

mod boxes;

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use boxes::{box_iou, mask_to_box, PixelBox};

use crate::annotation::{Bbox, PixelAnnotation};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// IoU levels averaged by BoxAccV2.
pub const BOX_IOU_LEVELS: [f64; 3] = [0.3, 0.5, 0.7];

/// Ascending thresholds in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep(Vec<f64>);

impl ThresholdSweep {
    pub fn new(values: Vec<f64>) -> Result<ThresholdSweep> {
        if values.is_empty() {
            return Err(Error::Metric("empty threshold sweep".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Metric("thresholds must lie in [0, 1]".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Metric("thresholds must be strictly increasing".into()));
        }
        Ok(ThresholdSweep(values))
    }

    /// `count` evenly spaced thresholds from 0 to 1 inclusive.
    pub fn uniform(count: usize) -> ThresholdSweep {
        assert!(count >= 2, "a uniform sweep needs both endpoints");
        let last = (count - 1) as f64;
        ThresholdSweep((0..count).map(|i| i as f64 / last).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ThresholdSweep {
    fn default() -> Self {
        ThresholdSweep::uniform(101)
    }
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    /// Normalised map of the ground-truth class at image resolution.
    pub map: Array2<f64>,
    pub predicted_class: usize,
    pub gt_class: usize,
    pub annotation: PixelAnnotation,
}

impl EvalRecord {
    fn gt_boxes(&self) -> Vec<Bbox> {
        self.annotation.boxes_for(self.gt_class)
    }

    fn gt_mask(&self) -> Option<&Array2<bool>> {
        self.annotation.mask_for(self.gt_class)
    }
}

/// `map >= tau`, element-wise.
pub fn threshold_map(map: ArrayView2<f64>, tau: f64) -> Array2<bool> {
    map.mapv(|v| v >= tau)
}

/// Best IoU with any ground-truth box of the extracted box at every threshold.
fn box_ious(record: &EvalRecord, sweep: &ThresholdSweep) -> Vec<f64> {
    let gt = record.gt_boxes();
    sweep
        .values()
        .iter()
        .map(|&tau| match mask_to_box(threshold_map(record.map.view(), tau).view()) {
            None => 0.0,
            Some(b) => {
                let b = b.to_bbox();
                gt.iter().map(|g| box_iou(&b, g)).fold(0.0, f64::max)
            }
        })
        .collect()
}

fn box_iou_table(records: &[EvalRecord], sweep: &ThresholdSweep, exec: Exec) -> Result<Vec<Vec<f64>>> {
    if records.is_empty() {
        return Err(Error::Metric("no records to evaluate".into()));
    }
    if let Some(r) = records.iter().find(|r| r.gt_boxes().is_empty()) {
        return Err(Error::Metric(format!("record {} has no ground-truth box", r.id)));
    }
    Ok(par::map(exec, records, |r| box_ious(r, sweep)))
}

/// Fraction of records (0..1) whose box IoU reaches `delta`, per threshold.
fn accuracy_curve(ious: &[Vec<f64>], delta: f64) -> Vec<f64> {
    let n = ious.len() as f64;
    let len = ious.first().map_or(0, Vec::len);
    (0..len)
        .map(|t| ious.iter().filter(|r| r[t] >= delta).count() as f64 / n)
        .collect()
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Box accuracy maximised over thresholds, averaged over IoU 0.3/0.5/0.7, in percent.
pub fn box_acc_v2(records: &[EvalRecord], sweep: &ThresholdSweep) -> Result<f64> {
    box_acc_v2_with(records, sweep, Exec::default())
}

pub fn box_acc_v2_with(records: &[EvalRecord], sweep: &ThresholdSweep, exec: Exec) -> Result<f64> {
    let ious = box_iou_table(records, sweep, exec)?;
    Ok(box_acc_v2_from(&ious))
}

fn box_acc_v2_from(ious: &[Vec<f64>]) -> f64 {
    let sum: f64 = BOX_IOU_LEVELS
        .iter()
        .map(|&d| accuracy_curve(ious, d).into_iter().fold(0.0, f64::max))
        .sum();
    100.0 * sum / BOX_IOU_LEVELS.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationAccuracy {
    pub top1: f64,
    pub gt_known: f64,
    /// Threshold that maximised GT-known accuracy.
    pub threshold: f64,
}

/// GT-known and Top-1 localization accuracy (percent) at IoU `delta`. The
/// threshold is the one maximising GT-known over the sweep (lowest on ties);
/// Top-1 is read at that same threshold and also requires a correct class.
pub fn top1_and_gtknown(records: &[EvalRecord], delta: f64, sweep: &ThresholdSweep) -> Result<LocalizationAccuracy> {
    let ious = box_iou_table(records, sweep, Exec::default())?;
    Ok(top1_and_gtknown_from(records, &ious, delta, sweep))
}

fn top1_and_gtknown_from(records: &[EvalRecord], ious: &[Vec<f64>], delta: f64, sweep: &ThresholdSweep) -> LocalizationAccuracy {
    let curve = accuracy_curve(ious, delta);
    let best = argmax_first(&curve);
    let n = records.len() as f64;
    let top1 = records
        .iter()
        .zip(ious)
        .filter(|(r, iou)| iou[best] >= delta && r.predicted_class == r.gt_class)
        .count() as f64
        / n;
    LocalizationAccuracy {
        top1: 100.0 * top1,
        gt_known: 100.0 * curve[best],
        threshold: sweep.values()[best],
    }
}

/// Pooled pixel counts at each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelCounts {
    pub true_positive: Vec<u64>,
    pub false_positive: Vec<u64>,
    pub positives: u64,
}

fn pixel_counts(records: &[EvalRecord], sweep: &ThresholdSweep, exec: Exec) -> Result<PixelCounts> {
    if records.is_empty() {
        return Err(Error::Metric("no records to evaluate".into()));
    }
    for r in records {
        let mask = r
            .gt_mask()
            .ok_or_else(|| Error::Metric(format!("record {} has no ground-truth mask", r.id)))?;
        if mask.dim() != r.map.dim() {
            return Err(Error::Metric(format!("record {}: mask and map sizes differ", r.id)));
        }
    }
    let t = sweep.values();
    // per record: histogram of how many thresholds each pixel passes
    let hists = par::map(exec, records, |r| {
        let mask = r.gt_mask().expect("checked above");
        let mut pos = vec![0u64; t.len() + 1];
        let mut neg = vec![0u64; t.len() + 1];
        for (&v, &m) in r.map.iter().zip(mask.iter()) {
            let passed = t.partition_point(|&tau| tau <= v);
            if m {
                pos[passed] += 1;
            } else {
                neg[passed] += 1;
            }
        }
        (pos, neg)
    });
    let mut pos = vec![0u64; t.len() + 1];
    let mut neg = vec![0u64; t.len() + 1];
    for (p, n) in hists {
        for i in 0..=t.len() {
            pos[i] += p[i];
            neg[i] += n[i];
        }
    }
    let positives: u64 = pos.iter().sum();
    if positives == 0 {
        return Err(Error::Metric("ground truth has no foreground pixels".into()));
    }
    // a pixel passing `p` thresholds is predicted at thresholds 0..p
    let mut tp = vec![0u64; t.len()];
    let mut fp = vec![0u64; t.len()];
    let (mut acc_p, mut acc_n) = (0u64, 0u64);
    for j in (0..t.len()).rev() {
        acc_p += pos[j + 1];
        acc_n += neg[j + 1];
        tp[j] = acc_p;
        fp[j] = acc_n;
    }
    Ok(PixelCounts {
        true_positive: tp,
        false_positive: fp,
        positives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    /// `None` when nothing is predicted at this threshold.
    pub precision: Option<f64>,
    pub recall: f64,
}

fn pr_from_counts(c: &PixelCounts, sweep: &ThresholdSweep) -> Vec<PrPoint> {
    sweep
        .values()
        .iter()
        .enumerate()
        .map(|(j, &threshold)| {
            let (tp, fp) = (c.true_positive[j] as f64, c.false_positive[j] as f64);
            PrPoint {
                threshold,
                precision: (tp + fp > 0.0).then(|| tp / (tp + fp)),
                recall: tp / c.positives as f64,
            }
        })
        .collect()
}

/// Pooled pixel precision and recall at every threshold.
pub fn pixel_pr_curve(records: &[EvalRecord], sweep: &ThresholdSweep) -> Result<Vec<PrPoint>> {
    Ok(pr_from_counts(&pixel_counts(records, sweep, Exec::default())?, sweep))
}

/// Trapezoidal area under the PR curve, walking from the highest threshold to
/// the lowest. The curve is extended flat to recall 0 from its first defined
/// point; thresholds with no predictions are skipped.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .rev()
        .filter_map(|p| p.precision.map(|prec| (p.recall, prec)))
        .collect();
    let Some(&(_, first)) = pts.first() else {
        return 0.0;
    };
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, first);
    for &(r, p) in &pts {
        area += (r - r0) * (p + p0) / 2.0;
        (r0, p0) = (r, p);
    }
    area
}

/// Pixel average precision, in percent.
pub fn pxap(records: &[EvalRecord], sweep: &ThresholdSweep) -> Result<f64> {
    Ok(100.0 * average_precision(&pixel_pr_curve(records, sweep)?))
}

fn iou_curve(c: &PixelCounts) -> Vec<f64> {
    c.true_positive
        .iter()
        .zip(&c.false_positive)
        .map(|(&tp, &fp)| {
            let fneg = c.positives - tp;
            tp as f64 / (tp + fp + fneg) as f64
        })
        .collect()
}

/// Peak pooled pixel IoU over the sweep, in percent.
pub fn piou(records: &[EvalRecord], sweep: &ThresholdSweep) -> Result<f64> {
    let c = pixel_counts(records, sweep, Exec::default())?;
    Ok(100.0 * iou_curve(&c).into_iter().fold(0.0, f64::max))
}

/// All applicable metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub num_images: usize,
    pub classification_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top1_loc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_known: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_acc_v2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pxap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub piou: Option<f64>,
    /// GT-known optimal threshold when boxes exist, else the pIoU-optimal one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_threshold: Option<f64>,
}

/// Per-threshold curves behind a [`MetricSummary`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricCurves {
    pub thresholds: Vec<f64>,
    /// Box accuracy (0..1) per IoU level in [`BOX_IOU_LEVELS`].
    pub box_accuracy: Vec<Vec<f64>>,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<f64>,
    pub pixel_iou: Vec<f64>,
}

impl MetricCurves {
    /// CSV with one row per threshold; absent columns are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,box_acc_0.3,box_acc_0.5,box_acc_0.7,precision,recall,pixel_iou\n");
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for (j, t) in self.thresholds.iter().enumerate() {
            let b = |i: usize| cell(self.box_accuracy.get(i).map(|c| c[j]));
            out.push_str(&format!(
                "{t},{},{},{},{},{},{}\n",
                b(0),
                b(1),
                b(2),
                cell(self.precision.get(j).copied().flatten()),
                cell(self.recall.get(j).copied()),
                cell(self.pixel_iou.get(j).copied()),
            ));
        }
        out
    }
}

/// Compute every metric the annotations support: box metrics when each
/// record has a ground-truth box, pixel metrics when each has a mask.
pub fn evaluate_records(records: &[EvalRecord], sweep: &ThresholdSweep, exec: Exec) -> Result<(MetricSummary, MetricCurves)> {
    if records.is_empty() {
        return Err(Error::Metric("no records to evaluate".into()));
    }
    let correct = records.iter().filter(|r| r.predicted_class == r.gt_class).count();
    let mut summary = MetricSummary {
        num_images: records.len(),
        classification_accuracy: 100.0 * correct as f64 / records.len() as f64,
        top1_loc: None,
        gt_known: None,
        box_acc_v2: None,
        pxap: None,
        piou: None,
        best_threshold: None,
    };
    let mut curves = MetricCurves {
        thresholds: sweep.values().to_vec(),
        ..MetricCurves::default()
    };
    let has_boxes = records.iter().all(|r| !r.gt_boxes().is_empty());
    let has_masks = records.iter().all(|r| r.gt_mask().is_some());
    if has_masks {
        let counts = pixel_counts(records, sweep, exec)?;
        let pr = pr_from_counts(&counts, sweep);
        let ious = iou_curve(&counts);
        summary.pxap = Some(100.0 * average_precision(&pr));
        summary.piou = Some(100.0 * ious.iter().copied().fold(0.0, f64::max));
        summary.best_threshold = Some(sweep.values()[argmax_first(&ious)]);
        curves.precision = pr.iter().map(|p| p.precision).collect();
        curves.recall = pr.iter().map(|p| p.recall).collect();
        curves.pixel_iou = ious;
    }
    if has_boxes {
        let ious = box_iou_table(records, sweep, exec)?;
        summary.box_acc_v2 = Some(box_acc_v2_from(&ious));
        let loc = top1_and_gtknown_from(records, &ious, 0.5, sweep);
        summary.top1_loc = Some(loc.top1);
        summary.gt_known = Some(loc.gt_known);
        summary.best_threshold = Some(loc.threshold);
        curves.box_accuracy = BOX_IOU_LEVELS.iter().map(|&d| accuracy_curve(&ious, d)).collect();
    }
    Ok((summary, curves))
}

/// Summary as a flat map, for table output.
pub fn summary_fields(s: &MetricSummary) -> HashMap<&'static str, f64> {
    let mut m = HashMap::new();
    m.insert("classification_accuracy", s.classification_accuracy);
    for (k, v) in [
        ("top1_loc", s.top1_loc),
        ("gt_known", s.gt_known),
        ("box_acc_v2", s.box_acc_v2),
        ("pxap", s.pxap),
        ("piou", s.piou),
    ] {
        if let Some(v) = v {
            m.insert(k, v);
        }
    }
    m
}

//! Detection records, a minimal linear detection head and the accuracy
//! metrics (IoU, precision/recall, AP, mAP50).

mod head;
mod text;

pub use head::{linear_head, task_loss, task_loss_grad, DetectionGrad, HeadWeights};
pub use text::{format_records, parse_detections, parse_ground_truth};

use crate::error::{Error, Result};

/// Axis-aligned box `(x1, y1, x2, y2)` with `x1 < x2`, `y1 < y2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::arg("box coordinates must be finite"));
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::arg(format!("degenerate box ({x1}, {y1}, {x2}, {y2})")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    fn is_normalized(&self) -> bool {
        self.coords().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: usize, confidence: f64) -> Result<Self> {
        if !bbox.is_normalized() {
            return Err(Error::arg(format!("detection box {bbox:?} is not normalized to [0, 1]")));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::arg(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            class_id,
            confidence,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BBox,
    pub class_id: usize,
}

impl GroundTruthBox {
    pub fn new(bbox: BBox, class_id: usize) -> Result<Self> {
        if !bbox.is_normalized() {
            return Err(Error::arg(format!("ground-truth box {bbox:?} is not normalized to [0, 1]")));
        }
        Ok(Self { bbox, class_id })
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positive: bool,
}

/// Cumulative precision/recall after each detection in descending
/// confidence order.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub num_gt: usize,
}

/// Sweeps detections by descending confidence (stable, so ties keep input
/// order). Each detection takes the unmatched same-class ground truth with
/// the highest IoU above `iou_threshold` (lowest index on ties) and counts
/// as a true positive; otherwise it is a false positive.
pub fn precision_recall(dets: &[Detection], gts: &[GroundTruthBox], iou_threshold: f64) -> PrCurve {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));

    let mut matched = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(dets.len());
    for (k, &i) in order.iter().enumerate() {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if matched[g] || gt.class_id != d.class_id {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if v > iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        let hit = best.is_some();
        if let Some((g, _)) = best {
            matched[g] = true;
            tp += 1;
        }
        points.push(PrPoint {
            confidence: d.confidence,
            precision: tp as f64 / (k + 1) as f64,
            recall: if gts.is_empty() { 0.0 } else { tp as f64 / gts.len() as f64 },
            true_positive: hit,
        });
    }
    PrCurve {
        points,
        num_gt: gts.len(),
    }
}

/// All-point interpolated AP: precision is replaced by its running maximum
/// from the right (the monotone envelope) and summed over recall increments.
pub fn average_precision(curve: &PrCurve) -> f64 {
    if curve.num_gt == 0 || curve.points.is_empty() {
        return 0.0;
    }
    let n = curve.points.len();
    let mut envelope = vec![0.0; n];
    let mut running = 0.0f64;
    for i in (0..n).rev() {
        running = running.max(curve.points[i].precision);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.points.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap
}

/// Per-class AP at IoU 0.5 for classes `0..num_classes`; classes without
/// ground truth are `None`.
pub fn per_class_ap(dets: &[Detection], gts: &[GroundTruthBox], num_classes: usize) -> Vec<Option<f64>> {
    (0..num_classes)
        .map(|cls| {
            let g: Vec<GroundTruthBox> = gts.iter().filter(|g| g.class_id == cls).copied().collect();
            if g.is_empty() {
                return None;
            }
            let d: Vec<Detection> = dets.iter().filter(|d| d.class_id == cls).copied().collect();
            Some(average_precision(&precision_recall(&d, &g, 0.5)))
        })
        .collect()
}

/// Unweighted mean of per-class AP over the classes that have ground truth.
pub fn map50(dets: &[Detection], gts: &[GroundTruthBox], num_classes: usize) -> f64 {
    let aps: Vec<f64> = per_class_ap(dets, gts, num_classes).into_iter().flatten().collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

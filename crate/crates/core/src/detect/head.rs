use std::ops::Range;

use super::{iou, BBox, Detection, GroundTruthBox};
use crate::error::{Error, Result};
use crate::numlin::{dot, Matrix, Rng};
use crate::ss2d::FeatureMap;

// keeps boxes non-degenerate when a size logit saturates
const MIN_SIDE: f64 = 1e-6;
const MIN_PROB: f64 = 1e-12;

/// Weights of the stand-in detection head.
///
/// The feature map is split into a `grid.0 x grid.1` array of anchor cells.
/// Each cell is mean-pooled to a `C`-vector `f`, then three linear branches
/// read it:
///
/// * box: `l = W_box f + b_box`; width `w = σ(l2)`, height `h = σ(l3)`,
///   `x1 = σ(l0)(1 - w)`, `y1 = σ(l1)(1 - h)`, `x2 = x1 + w`, `y2 = y1 + h`,
///   which always yields a valid box inside the unit square;
/// * class: argmax of `W_cls f + b_cls`;
/// * confidence: `σ(w_conf · f + b_conf)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub w_box: Matrix,
    pub b_box: [f64; 4],
    pub w_cls: Matrix,
    pub b_cls: Vec<f64>,
    pub w_conf: Matrix,
    pub b_conf: f64,
    pub grid: (usize, usize),
}

impl HeadWeights {
    pub fn zeros(channels: usize, num_classes: usize, grid: (usize, usize)) -> Self {
        Self {
            w_box: Matrix::zeros(4, channels),
            b_box: [0.0; 4],
            w_cls: Matrix::zeros(num_classes, channels),
            b_cls: vec![0.0; num_classes],
            w_conf: Matrix::zeros(1, channels),
            b_conf: 0.0,
            grid,
        }
    }

    pub fn random(channels: usize, num_classes: usize, grid: (usize, usize), std: f64, rng: &mut Rng) -> Self {
        let b_box = [std * rng.normal(), std * rng.normal(), std * rng.normal(), std * rng.normal()];
        Self {
            w_box: rng.normal_matrix(4, channels, std),
            b_box,
            w_cls: rng.normal_matrix(num_classes, channels, std),
            b_cls: rng.normal_vec(num_classes, std),
            w_conf: rng.normal_matrix(1, channels, std),
            b_conf: std * rng.normal(),
            grid,
        }
    }

    pub fn channels(&self) -> usize {
        self.w_box.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.w_cls.rows()
    }

    fn validate(&self, f: &FeatureMap) -> Result<()> {
        let c = f.channels();
        let shapes_ok = self.w_box.shape() == (4, c)
            && self.w_cls.cols() == c
            && self.b_cls.len() == self.w_cls.rows()
            && self.w_conf.shape() == (1, c);
        if !shapes_ok {
            return Err(Error::shape(
                "linear_head",
                format!("head over {} channels", self.channels()),
                f.dims_str(),
            ));
        }
        let (gh, gw) = self.grid;
        if gh == 0 || gw == 0 || gh > f.height() || gw > f.width() {
            return Err(Error::shape(
                "linear_head",
                format!("{gh}x{gw} anchor grid"),
                f.dims_str(),
            ));
        }
        Ok(())
    }

    fn cells(&self, f: &FeatureMap) -> Vec<(Range<usize>, Range<usize>)> {
        let (gh, gw) = self.grid;
        let (h, w) = (f.height(), f.width());
        let mut out = Vec::with_capacity(gh * gw);
        for i in 0..gh {
            for j in 0..gw {
                out.push((i * h / gh..(i + 1) * h / gh, j * w / gw..(j + 1) * w / gw));
            }
        }
        out
    }

    /// dL/dfeatures given per-detection gradients (in [`linear_head`]
    /// order). The class branch is an argmax and contributes nothing.
    pub fn backward(&self, f: &FeatureMap, grads: &[DetectionGrad]) -> Result<FeatureMap> {
        self.validate(f)?;
        let cells = self.cells(f);
        if grads.len() != cells.len() {
            return Err(Error::shape(
                "HeadWeights::backward",
                format!("{} gradients", grads.len()),
                format!("{} anchor cells", cells.len()),
            ));
        }
        let c = f.channels();
        let mut out = FeatureMap::zeros(f.height(), f.width(), c);
        for ((rows, cols), g) in cells.into_iter().zip(grads) {
            let pooled = pool(f, &rows, &cols);
            let l: Vec<f64> = (0..4).map(|k| dot(self.w_box.row(k), &pooled) + self.b_box[k]).collect();
            let conf = sigmoid(dot(self.w_conf.data(), &pooled) + self.b_conf);

            let mut dl = [0.0; 4];
            for (pos, size) in [(0usize, 2usize), (1, 3)] {
                let sp = sigmoid(l[pos]);
                let raw = sigmoid(l[size]);
                let ss = raw.clamp(MIN_SIDE, 1.0 - MIN_SIDE);
                let dss = if ss == raw { raw * (1.0 - raw) } else { 0.0 };
                let (d_lo, d_hi) = (g.d_box[pos], g.d_box[pos + 2]);
                // lo = sp (1 - ss), hi = lo + ss
                let dsp = (d_lo + d_hi) * (1.0 - ss);
                let dsize = (d_lo + d_hi) * (-sp) + d_hi;
                dl[pos] = dsp * sp * (1.0 - sp);
                dl[size] = dsize * dss;
            }
            let dconf = g.d_confidence * conf * (1.0 - conf);

            let mut dpooled = vec![0.0; c];
            for ch in 0..c {
                let mut acc = dconf * self.w_conf[(0, ch)];
                for (k, dlk) in dl.iter().enumerate() {
                    acc += dlk * self.w_box[(k, ch)];
                }
                dpooled[ch] = acc;
            }
            let count = (rows.len() * cols.len()) as f64;
            for r in rows.clone() {
                for col in cols.clone() {
                    for (o, d) in out.pixel_mut(r, col).iter_mut().zip(&dpooled) {
                        *o += d / count;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn pool(f: &FeatureMap, rows: &Range<usize>, cols: &Range<usize>) -> Vec<f64> {
    let mut acc = vec![0.0; f.channels()];
    for r in rows.clone() {
        for c in cols.clone() {
            for (a, v) in acc.iter_mut().zip(f.pixel(r, c)) {
                *a += v;
            }
        }
    }
    let count = (rows.len() * cols.len()) as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    acc
}

fn decode_axis(pos_logit: f64, size_logit: f64) -> (f64, f64) {
    let size = sigmoid(size_logit).clamp(MIN_SIDE, 1.0 - MIN_SIDE);
    let lo = sigmoid(pos_logit) * (1.0 - size);
    (lo, (lo + size).min(1.0))
}

/// One detection per anchor cell, cells in row-major order.
pub fn linear_head(features: &FeatureMap, weights: &HeadWeights) -> Result<Vec<Detection>> {
    weights.validate(features)?;
    weights
        .cells(features)
        .into_iter()
        .map(|(rows, cols)| {
            let f = pool(features, &rows, &cols);
            let l: Vec<f64> = (0..4).map(|k| dot(weights.w_box.row(k), &f) + weights.b_box[k]).collect();
            let (x1, x2) = decode_axis(l[0], l[2]);
            let (y1, y2) = decode_axis(l[1], l[3]);
            let mut class_id = 0;
            let mut best = f64::NEG_INFINITY;
            for k in 0..weights.num_classes() {
                let logit = dot(weights.w_cls.row(k), &f) + weights.b_cls[k];
                if logit > best {
                    best = logit;
                    class_id = k;
                }
            }
            let confidence = sigmoid(dot(weights.w_conf.data(), &f) + weights.b_conf);
            Detection::new(BBox::new(x1, y1, x2, y2)?, class_id, confidence)
        })
        .collect()
}

/// Gradient of the task loss with respect to one detection's outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DetectionGrad {
    pub d_box: [f64; 4],
    pub d_confidence: f64,
}

/// Greedy class-agnostic assignment: pairs with positive IoU are taken in
/// descending IoU order (ties by detection, then ground-truth index), each
/// side used at most once.
fn greedy_pairs(dets: &[Detection], gts: &[GroundTruthBox]) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let v = iou(&d.bbox, &g.bbox);
            if v > 0.0 {
                cands.push((v, i, j));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; dets.len()];
    let mut used_g = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !used_d[i] && !used_g[j] {
            used_d[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Probability the detection assigns to the ground-truth class: its
/// confidence when the classes agree, `1 - confidence` otherwise.
fn class_prob(d: &Detection, g: &GroundTruthBox) -> f64 {
    if d.class_id == g.class_id {
        d.confidence
    } else {
        1.0 - d.confidence
    }
}

/// Mean squared box-coordinate error (averaged over the four coordinates)
/// plus mean negative log-likelihood of the ground-truth class, over the
/// greedily matched pairs. Zero when nothing matches.
pub fn task_loss(dets: &[Detection], gts: &[GroundTruthBox]) -> f64 {
    task_loss_grad(dets, gts).0
}

/// [`task_loss`] and its gradient with respect to every detection.
pub fn task_loss_grad(dets: &[Detection], gts: &[GroundTruthBox]) -> (f64, Vec<DetectionGrad>) {
    let pairs = greedy_pairs(dets, gts);
    let mut grads = vec![DetectionGrad::default(); dets.len()];
    if pairs.is_empty() {
        return (0.0, grads);
    }
    let m = pairs.len() as f64;
    let mut box_term = 0.0;
    let mut cls_term = 0.0;
    for &(i, j) in &pairs {
        let (d, g) = (&dets[i], &gts[j]);
        let pc = d.bbox.coords();
        let gc = g.bbox.coords();
        for k in 0..4 {
            let e = pc[k] - gc[k];
            box_term += e * e / 4.0;
            grads[i].d_box[k] = 2.0 * e / (4.0 * m);
        }
        let p = class_prob(d, g);
        if p > MIN_PROB {
            cls_term -= p.ln();
            let dp = -1.0 / (p * m);
            grads[i].d_confidence = if d.class_id == g.class_id { dp } else { -dp };
        } else {
            cls_term -= MIN_PROB.ln();
        }
    }
    ((box_term + cls_term) / m, grads)
}

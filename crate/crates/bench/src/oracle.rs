//! Brute-force reference implementations used by the self-check and the
//! acceptance suite. They share no code paths with the library routines they
//! check beyond the data types.

use lowrank_ss2d::detect::{iou, BBox, Detection, GroundTruthBox};
use lowrank_ss2d::numlin::{Matrix, Rng};
use lowrank_ss2d::ss2d::{DirectionalSystem, FeatureMap, ScanDirection, Ss2dLayer};

/// Cell visit order of one direction, written out longhand.
pub fn oracle_order(h: usize, w: usize, dir: ScanDirection) -> Vec<(usize, usize)> {
    let mut row_major = Vec::with_capacity(h * w);
    let mut col_major = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            row_major.push((r, c));
        }
    }
    for c in 0..w {
        for r in 0..h {
            col_major.push((r, c));
        }
    }
    match dir {
        ScanDirection::RowForward => row_major,
        ScanDirection::RowBackward => row_major.into_iter().rev().collect(),
        ScanDirection::ColForward => col_major,
        ScanDirection::ColBackward => col_major.into_iter().rev().collect(),
    }
}

/// Textbook dense recurrence `h = A h + B x`, `y = C h`.
pub fn dense_recurrence(a: &Matrix, b: &Matrix, c: &Matrix, xs: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = a.rows();
    let mut state = vec![0.0; n];
    let mut states = Vec::with_capacity(xs.len());
    let mut ys = Vec::with_capacity(xs.len());
    for &x in xs {
        let mut next = vec![0.0; n];
        for (i, v) in next.iter_mut().enumerate() {
            for (j, s) in state.iter().enumerate() {
                *v += a[(i, j)] * s;
            }
            *v += b[(i, 0)] * x;
        }
        state = next;
        ys.push((0..n).map(|i| c[(0, i)] * state[i]).sum());
        states.push(state.clone());
    }
    (states, ys)
}

/// SS2D forward by materializing each permuted sequence. Low-rank systems
/// are expanded to their dense transition first. Selective systems are not
/// supported and yield `None`.
pub fn brute_force_ss2d(f: &FeatureMap, layer: &Ss2dLayer) -> Option<FeatureMap> {
    let (h, w, channels) = f.dims();
    let mut out = FeatureMap::zeros(h, w, channels);
    for dir in ScanDirection::ALL {
        let order = oracle_order(h, w, dir);
        for ch in 0..channels {
            let (a, b, c) = match layer.system(dir, ch) {
                DirectionalSystem::Full(d) => (d.a_bar().clone(), d.b_bar().clone(), d.c().clone()),
                DirectionalSystem::LowRank { transition, b_bar, c } => {
                    (transition.materialize(), b_bar.clone(), c.clone())
                }
                DirectionalSystem::Selective { .. } => return None,
            };
            let seq: Vec<f64> = order.iter().map(|&(r, cc)| f.get(r, cc, ch)).collect();
            let (_, ys) = dense_recurrence(&a, &b, &c, &seq);
            for (&(r, cc), y) in order.iter().zip(ys) {
                out.set(r, cc, ch, out.get(r, cc, ch) + y);
            }
        }
    }
    Some(out)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// AP at IoU 0.5 by brute force: every prefix of the confidence ranking is
/// matched from scratch, then `p(r) = max{P_k : R_k >= r}` is integrated over
/// the distinct recall levels.
pub fn oracle_ap(dets: &[Detection], gts: &[GroundTruthBox]) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut ranked: Vec<(usize, &Detection)> = dets.iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.confidence.total_cmp(&a.1.confidence).then(a.0.cmp(&b.0)));
    let mut points = Vec::with_capacity(ranked.len());
    for k in 1..=ranked.len() {
        let mut used = vec![false; gts.len()];
        let mut tp = 0;
        for (_, d) in &ranked[..k] {
            let mut pick: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] || gt.class_id != d.class_id {
                    continue;
                }
                let v = iou(&d.bbox, &gt.bbox);
                if v > 0.5 && pick.is_none_or(|(_, best)| v > best) {
                    pick = Some((g, v));
                }
            }
            if let Some((g, _)) = pick {
                used[g] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / k as f64, tp as f64 / gts.len() as f64));
    }
    let mut levels: Vec<f64> = points.iter().map(|p| p.1).filter(|&r| r > 0.0).collect();
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let p = points.iter().filter(|q| q.1 >= r).map(|q| q.0).fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

/// Mean of [`oracle_ap`] over the classes that have ground truth.
pub fn oracle_map(dets: &[Detection], gts: &[GroundTruthBox], classes: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for cls in 0..classes {
        let g: Vec<GroundTruthBox> = gts.iter().filter(|g| g.class_id == cls).copied().collect();
        if g.is_empty() {
            continue;
        }
        let d: Vec<Detection> = dets.iter().filter(|d| d.class_id == cls).copied().collect();
        sum += oracle_ap(&d, &g);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Box on a coarse grid so that overlaps and exact ties are common.
fn grid_box(rng: &mut Rng) -> BBox {
    let x1 = rng.below(4) as f64 * 0.2;
    let y1 = rng.below(4) as f64 * 0.2;
    let x2 = (x1 + 0.2 * (1 + rng.below(3)) as f64).min(1.0);
    let y2 = (y1 + 0.2 * (1 + rng.below(3)) as f64).min(1.0);
    BBox::new(x1, y1, x2, y2).expect("grid boxes are valid")
}

/// Random detection instance with at most 6 detections, 4 ground-truth boxes
/// and 3 classes. Half of the detections copy a ground-truth box.
pub fn metric_instance(rng: &mut Rng) -> (Vec<Detection>, Vec<GroundTruthBox>, usize) {
    let classes = 1 + rng.below(3);
    let gts: Vec<GroundTruthBox> = (0..rng.below(5))
        .map(|_| GroundTruthBox::new(grid_box(rng), rng.below(classes)).expect("valid class"))
        .collect();
    let dets = (0..rng.below(7))
        .map(|_| {
            let b = if !gts.is_empty() && rng.below(2) == 0 {
                gts[rng.below(gts.len())].bbox
            } else {
                grid_box(rng)
            };
            let conf = (1 + rng.below(5)) as f64 / 5.0;
            Detection::new(b, rng.below(classes), conf).expect("valid detection")
        })
        .collect();
    (dets, gts, classes)
}

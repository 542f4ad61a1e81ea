use serde::{Deserialize, Serialize};

use super::detection::{temporal_iou, FrameProbs};
use crate::error::{Error, Result};

/// Maximal run `[start, end)` of one non-background label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Runs of identical labels, skipping negative (background) frames.
pub fn segments_of(labels: &[i64]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < labels.len() {
        let l = labels[t];
        let start = t;
        while t < labels.len() && labels[t] == l {
            t += 1;
        }
        if l >= 0 {
            out.push(Segment { start, end: t, class: l as usize });
        }
    }
    out
}

/// Frame labels of the argmax class, background mapped to `-1`.
pub fn labels_from_probs(fp: &FrameProbs) -> Vec<i64> {
    fp.argmax_labels()
}

/// Frame accuracy, edit score and segmental F1, all in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub acc: f64,
    pub edit: f64,
    pub f1_10: f64,
    pub f1_25: f64,
    pub f1_50: f64,
}

fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn edit_score(pred: &[Segment], gt: &[Segment]) -> f64 {
    let n = pred.len().max(gt.len());
    if n == 0 {
        return 100.0;
    }
    let p: Vec<usize> = pred.iter().map(|s| s.class).collect();
    let g: Vec<usize> = gt.iter().map(|s| s.class).collect();
    (1.0 - levenshtein(&p, &g) as f64 / n as f64) * 100.0
}

/// Segmental F1 at an IoU threshold. Predictions are visited in order; each
/// claims the unmatched same-class ground-truth segment of highest IoU
/// (lower index on ties) when that IoU reaches the threshold.
fn f1_at(pred: &[Segment], gt: &[Segment], threshold: f64) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 100.0;
    }
    let mut used = vec![false; gt.len()];
    let mut tp = 0usize;
    for p in pred {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if used[j] || g.class != p.class {
                continue;
            }
            let iou = temporal_iou((p.start, p.end), (g.start, g.end));
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, iou)) = best {
            if iou >= threshold {
                used[j] = true;
                tp += 1;
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / pred.len() as f64;
    let recall = tp as f64 / gt.len() as f64;
    200.0 * precision * recall / (precision + recall)
}

/// Compares per-frame predicted labels with ground truth. Negative labels are
/// background: they count for frame accuracy but never form segments.
pub fn eval_segmentation(pred: &[i64], gt: &[i64]) -> Result<SegmentationMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted frames for {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Eval("segmentation needs at least one frame".into()));
    }
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    let (ps, gs) = (segments_of(pred), segments_of(gt));
    Ok(SegmentationMetrics {
        acc: 100.0 * correct as f64 / pred.len() as f64,
        edit: edit_score(&ps, &gs),
        f1_10: f1_at(&ps, &gs, 0.10),
        f1_25: f1_at(&ps, &gs, 0.25),
        f1_50: f1_at(&ps, &gs, 0.50),
    })
}

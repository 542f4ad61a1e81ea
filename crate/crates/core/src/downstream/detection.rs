use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::argmax;
use super::linear::{LinearHead, ProbeConfig};
use super::segmentation::{segments_of, Segment};
use crate::error::{Error, Result};
use crate::parallel::{self, Exec};
use crate::params::ParamStore;
use crate::pretrain::Model;
use crate::skelio::SkeletonSequence;
use crate::tensor::Mat;

/// Detected action instance `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentTriplet {
    pub start: usize,
    pub end: usize,
    pub class: usize,
    pub score: f64,
}

/// Per-frame class probabilities of a video; the last column is background.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameProbs {
    probs: Mat,
}

impl FrameProbs {
    /// Checks that every row is a distribution over at least one action
    /// class plus background.
    pub fn new(probs: Mat) -> Result<Self> {
        if probs.cols() < 2 {
            return Err(Error::Shape(format!("frame probabilities need at least 2 columns, got {}", probs.cols())));
        }
        for (t, row) in probs.iter_rows().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Eval(format!("frame {t} is not a probability distribution (sum {sum})")));
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Mat {
        &self.probs
    }

    pub fn frames(&self) -> usize {
        self.probs.rows()
    }

    /// Number of action classes (background excluded).
    pub fn classes(&self) -> usize {
        self.probs.cols() - 1
    }

    pub fn argmax_labels(&self) -> Vec<i64> {
        let bg = self.classes();
        self.probs.iter_rows().map(argmax).map(|c| if c == bg { -1 } else { c as i64 }).collect()
    }
}

/// Window start frames covering `0..len` with windows of `window` frames.
/// A last window is aligned to the end when the stride does not land there;
/// a sequence shorter than one window gets a single window at 0.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 || window == 0 {
        return Err(Error::Config("window and stride must be at least 1".into()));
    }
    if len <= window {
        return Ok(vec![0]);
    }
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|s| s + window <= len).collect();
    if starts.last().is_some_and(|s| s + window < len) {
        starts.push(len - window);
    }
    Ok(starts)
}

/// Averages overlapping window outputs per frame and renormalizes each row.
/// Window rows past `len` (padding) are ignored; every frame must be covered.
pub fn average_windows(len: usize, windows: &[(usize, Mat)]) -> Result<Mat> {
    let cols = windows.first().map_or(0, |(_, m)| m.cols());
    let mut sum = Mat::zeros(len, cols);
    let mut count = vec![0usize; len];
    for (start, m) in windows {
        if m.cols() != cols {
            return Err(Error::Shape(format!("window outputs have {} and {cols} columns", m.cols())));
        }
        for (r, row) in m.iter_rows().enumerate() {
            let t = start + r;
            if t >= len {
                break;
            }
            count[t] += 1;
            for (s, v) in sum.row_mut(t).iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    if let Some(t) = count.iter().position(|&c| c == 0) {
        return Err(Error::Eval(format!("frame {t} is covered by no window")));
    }
    for t in 0..len {
        let row = sum.row_mut(t);
        let n = count[t] as f64;
        row.iter_mut().for_each(|v| *v /= n);
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(sum)
}

/// Per-frame features of one window: the rows of the temporal stream output.
/// Only this stream is frame-aligned (and causal under a causal encoder).
pub fn frame_features(model: &Model, store: &ParamStore, window: &SkeletonSequence) -> Result<Mat> {
    let (feats, _) = model.encoder.represent(store, &model.prepare(window))?;
    Ok(feats.temporal)
}

fn window_len(model: &Model) -> usize {
    model.encoder.config().frames
}

/// Sliding-window frame classification of an untrimmed sequence.
pub fn frame_probs(model: &Model, store: &ParamStore, head: &LinearHead, seq: &SkeletonSequence, stride: usize, exec: Exec) -> Result<FrameProbs> {
    model.check_record(seq)?;
    let t = window_len(model);
    let starts = window_starts(seq.len(), t, stride)?;
    let outs: Vec<(usize, Mat)> = parallel::map(exec, &starts, |&s| Ok((s, head.probs(&frame_features(model, store, &seq.window(s, t))?)?)))
        .into_iter()
        .collect::<Result<_>>()?;
    FrameProbs::new(average_windows(seq.len(), &outs)?)
}

/// Fits a linear frame classifier on frozen temporal features of labeled
/// untrimmed videos. Background frames map to class `classes`; padding frames
/// of a short video are left out.
pub fn train_frame_head(
    model: &Model,
    store: &ParamStore,
    videos: &[SkeletonSequence],
    classes: usize,
    stride: usize,
    probe: &ProbeConfig,
    exec: Exec,
) -> Result<LinearHead> {
    let t = window_len(model);
    let mut jobs = Vec::new();
    for v in videos {
        model.check_record(v)?;
        let labels = v.frame_labels.as_ref().ok_or_else(|| Error::Record { id: v.id.clone(), message: "no frame labels".into() })?;
        if let Some(bad) = labels.iter().find(|&&l| l < -1 || l >= classes as i64) {
            return Err(Error::Record { id: v.id.clone(), message: format!("frame label {bad} outside -1..{classes}") });
        }
        for s in window_starts(v.len(), t, stride)? {
            jobs.push((v, s));
        }
    }
    let parts: Vec<(Mat, Vec<usize>)> = parallel::map(exec, &jobs, |&(v, s)| {
        let feats = frame_features(model, store, &v.window(s, t))?;
        let have = v.len().saturating_sub(s).min(t);
        let labels = v.frame_labels.as_ref().map_or(&[][..], |l| &l[s..s + have]);
        let ys = labels.iter().map(|&l| if l < 0 { classes } else { l as usize }).collect();
        Ok((feats.slice_rows(0, have), ys))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let x = Mat::vstack(&parts.iter().map(|(m, _)| m).collect::<Vec<_>>());
    let y: Vec<usize> = parts.into_iter().flat_map(|(_, y)| y).collect();
    LinearHead::fit(&x, &y, classes + 1, probe)
}

/// Post-processing of frame probabilities into action instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    /// Median filter width in frames; 0 or 1 disables smoothing.
    pub smoothing: usize,
    /// Shortest run kept, in frames.
    pub min_length: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { smoothing: 9, min_length: 5 }
    }
}

/// Centered running median; windows are truncated at the ends and the lower
/// median is taken for even counts.
fn median_smooth(labels: &[i64], width: usize) -> Vec<i64> {
    if width <= 1 {
        return labels.to_vec();
    }
    let half = width / 2;
    let right = width - 1 - half;
    (0..labels.len())
        .map(|i| {
            let mut w = labels[i.saturating_sub(half)..(i + right + 1).min(labels.len())].to_vec();
            w.sort_unstable();
            w[(w.len() - 1) / 2]
        })
        .collect()
}

/// Smoothed argmax labels, merged into runs and scored by the mean
/// probability of the run's class.
pub fn postprocess_segments(fp: &FrameProbs, cfg: &PostprocessConfig) -> Vec<SegmentTriplet> {
    let labels = median_smooth(&fp.argmax_labels(), cfg.smoothing);
    segments_of(&labels)
        .into_iter()
        .filter(|s| s.len() >= cfg.min_length.max(1))
        .map(|s| {
            let score = (s.start..s.end).map(|t| fp.probs()[(t, s.class)]).sum::<f64>() / s.len() as f64;
            SegmentTriplet { start: s.start, end: s.end, class: s.class, score }
        })
        .collect()
}

/// Intersection over union of two half-open frame intervals.
pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Ground-truth action instances of a frame labeling.
pub fn gt_segments(frame_labels: &[i64]) -> Vec<Segment> {
    segments_of(frame_labels)
}

/// Area under the precision-recall curve with the all-point precision
/// envelope. `hits` are the ranked predictions (true = matched).
pub fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(hits.len());
    for (k, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64, h));
    }
    let mut envelope = 0.0f64;
    for p in points.iter_mut().rev() {
        envelope = envelope.max(p.1);
        p.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision, hit) in points {
        if hit {
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
    }
    ap
}

/// Predictions for one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoDetections {
    pub id: String,
    pub triplets: Vec<SegmentTriplet>,
}

/// Ground truth of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoTruth {
    pub id: String,
    pub segments: Vec<Segment>,
}

/// Detection quality at one IoU threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionMap {
    /// Mean over classes of AP pooled across videos.
    pub map_a: f64,
    /// Mean over videos of the mean AP over the classes in that video.
    pub map_v: f64,
    pub per_class: BTreeMap<usize, f64>,
}

struct Candidate<'a> {
    video: &'a str,
    t: SegmentTriplet,
}

/// Score descending, then a content order, so the result does not depend on
/// the input order of the predictions.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.t.score.total_cmp(&a.t.score).then_with(|| a.video.cmp(b.video)).then_with(|| a.t.start.cmp(&b.t.start)).then_with(|| a.t.end.cmp(&b.t.end))
}

/// AP of one class over the given videos' predictions and ground truth.
fn class_ap(class: usize, preds: &[(&str, &[SegmentTriplet])], gt: &BTreeMap<&str, Vec<Segment>>, threshold: f64) -> f64 {
    let mut cands: Vec<Candidate> =
        preds.iter().flat_map(|(v, ts)| ts.iter().filter(|t| t.class == class).map(move |t| Candidate { video: v, t: *t })).collect();
    cands.sort_by(rank);
    let mut used: BTreeMap<&str, Vec<bool>> = gt.iter().map(|(v, s)| (*v, vec![false; s.len()])).collect();
    let n_gt = gt.values().flatten().filter(|s| s.class == class).count();
    let hits: Vec<bool> = cands
        .iter()
        .map(|c| {
            let Some(segs) = gt.get(c.video) else { return false };
            let flags = used.get_mut(c.video).expect("same keys as gt");
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in segs.iter().enumerate() {
                if flags[j] || g.class != class {
                    continue;
                }
                let iou = temporal_iou((c.t.start, c.t.end), (g.start, g.end));
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            best.map(|(j, _)| flags[j] = true).is_some()
        })
        .collect();
    average_precision(&hits, n_gt)
}

/// mAP over classes and over videos at one temporal IoU threshold.
pub fn eval_detection_map(preds: &[VideoDetections], truth: &[VideoTruth], threshold: f64) -> Result<DetectionMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Eval(format!("IoU threshold must lie in (0, 1), got {threshold}")));
    }
    let mut gt: BTreeMap<&str, Vec<Segment>> = BTreeMap::new();
    for v in truth {
        if gt.insert(&v.id, v.segments.clone()).is_some() {
            return Err(Error::Eval(format!("duplicate ground-truth video {}", v.id)));
        }
        if let Some(s) = v.segments.iter().find(|s| s.is_empty()) {
            return Err(Error::Eval(format!("empty ground-truth segment {s:?} in {}", v.id)));
        }
    }
    let mut seen = BTreeSet::new();
    for p in preds {
        if !gt.contains_key(p.id.as_str()) {
            return Err(Error::Eval(format!("predictions for unknown video {}", p.id)));
        }
        if !seen.insert(p.id.as_str()) {
            return Err(Error::Eval(format!("duplicate predictions for video {}", p.id)));
        }
        if let Some(t) = p.triplets.iter().find(|t| t.start >= t.end || !t.score.is_finite()) {
            return Err(Error::Eval(format!("invalid triplet {t:?} in {}", p.id)));
        }
    }
    let classes: BTreeSet<usize> = gt.values().flatten().map(|s| s.class).collect();
    if classes.is_empty() {
        return Err(Error::Eval("ground truth has no action instances".into()));
    }
    let all: Vec<(&str, &[SegmentTriplet])> = preds.iter().map(|p| (p.id.as_str(), p.triplets.as_slice())).collect();
    let per_class: BTreeMap<usize, f64> = classes.iter().map(|&c| (c, class_ap(c, &all, &gt, threshold))).collect();
    let map_a = per_class.values().sum::<f64>() / per_class.len() as f64;

    let mut video_aps = Vec::new();
    for (id, segs) in &gt {
        let present: BTreeSet<usize> = segs.iter().map(|s| s.class).collect();
        if present.is_empty() {
            continue;
        }
        let own: Vec<(&str, &[SegmentTriplet])> = all.iter().filter(|(v, _)| v == id).copied().collect();
        let one: BTreeMap<&str, Vec<Segment>> = BTreeMap::from([(*id, segs.clone())]);
        let aps: Vec<f64> = present.iter().map(|&c| class_ap(c, &own, &one, threshold)).collect();
        video_aps.push(aps.iter().sum::<f64>() / aps.len() as f64);
    }
    let map_v = video_aps.iter().sum::<f64>() / video_aps.len() as f64;
    Ok(DetectionMap { map_a, map_v, per_class })
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::Serialize;

use usdrl::downstream::interchange::{read_jsonl, write_jsonl, DetectionLine, SegmentationLine};
use usdrl::downstream::{
    embed_labeled, ensemble, eval_detection_map, eval_segmentation, finetune_semi, frame_probs, gt_segments, knn_retrieve, labels_from_probs,
    linear_probe, postprocess_segments, predict_early, require_causal, train_frame_head, train_prediction_head, transfer, FrameProbs,
    SegmentationMetrics, VideoDetections, VideoTruth, RATIOS,
};
use usdrl::parallel::Exec;
use usdrl::params::ParamStore;
use usdrl::pretrain::{Model, SavedConfig};
use usdrl::skelio::SkeletonSequence;
use usdrl::Mat;

use crate::commands::{eval_manifest, finish, load_manifest, load_model, split};
use crate::report::{write_curve, RunReport};
use crate::Ctx;

/// IoU thresholds of the detection curve.
pub const IOU_THRESHOLDS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

#[derive(Args, Debug, Serialize)]
pub struct Common {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest; defaults to data.manifest, then the checkpoint's dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    train_split: String,
    #[arg(long, default_value = "test")]
    test_split: String,
}

#[derive(Args, Debug, Serialize)]
pub struct Dense {
    /// Model mode: frame classifier on a frozen encoder.
    #[arg(long, conflicts_with_all = ["predictions", "truth"])]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "untrimmed_train")]
    train_split: String,
    #[arg(long, default_value = "untrimmed_test")]
    test_split: String,
    /// File mode: predictions JSONL (detection triplets, or frame labels for segment).
    #[arg(long, requires = "truth")]
    predictions: Option<PathBuf>,
    /// File mode: ground truth JSONL of `{"id", "frame_labels"}` lines.
    #[arg(long, requires = "predictions")]
    truth: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum Task {
    /// Linear classifier on frozen instance embeddings.
    Probe(Common),
    /// Nearest-neighbor retrieval of test embeddings among training ones.
    Knn(Common),
    /// End-to-end fine-tuning on labeled fractions of the training split.
    Semi {
        #[command(flatten)]
        common: Common,
        #[arg(long = "fraction", default_values_t = [0.01, 0.1])]
        fractions: Vec<f64>,
    },
    /// Temporal action detection mAP.
    Detect {
        #[command(flatten)]
        dense: Dense,
        /// Headline IoU threshold (overrides detect.iou).
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Frame-wise action segmentation metrics.
    Segment(Dense),
    /// Accuracy from growing prefixes of each test sequence (causal checkpoints only).
    Predict(Common),
    /// Probe and kNN of the checkpoint on another dataset.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Manifest of the target dataset.
        #[arg(long)]
        target: PathBuf,
    },
    /// Average the probe class probabilities of several checkpoints.
    Ensemble {
        #[arg(long = "checkpoint", required = true, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        train_split: String,
        #[arg(long, default_value = "test")]
        test_split: String,
    },
}

pub fn run(ctx: &Ctx, task: &Task) -> Result<PathBuf> {
    let exec = Exec::available();
    match task {
        Task::Probe(c) => {
            let (model, store, train, test, seed) = frozen(ctx, c)?;
            let res = linear_probe(&embed_labeled(&model, &store, &train, exec)?, &embed_labeled(&model, &store, &test, exec)?, &ctx.cfg.probe)?;
            let mut r = RunReport::new("eval probe", ctx.digest.clone(), seed);
            r.metric("top1", res.accuracy);
            finish(ctx, r)
        }
        Task::Knn(c) => {
            let (model, store, train, test, seed) = frozen(ctx, c)?;
            let res = knn_retrieve(&embed_labeled(&model, &store, &test, exec)?, &embed_labeled(&model, &store, &train, exec)?, 1)?;
            let mut r = RunReport::new("eval knn", ctx.digest.clone(), seed);
            r.metric("top1", res.top1);
            finish(ctx, r)
        }
        Task::Semi { common, fractions } => {
            let (model, store, train, test, _) = frozen(ctx, common)?;
            let ft = &ctx.cfg.finetune;
            let mut r = RunReport::new("eval semi", ctx.digest.clone(), ft.seed);
            for &f in fractions {
                let res = finetune_semi(&model, &store, &train, &test, f, ft, exec)?;
                if !res.subset.dropped_classes.is_empty() {
                    r.warn(format!("labeled fraction {f} leaves no training sample for classes {:?}", res.subset.dropped_classes));
                }
                r.metric(format!("top1@{f}"), res.accuracy);
                r.metric(format!("train_records@{f}"), res.train_records as f64);
            }
            finish(ctx, r)
        }
        Task::Detect { dense, iou } => detect(ctx, dense, iou.unwrap_or(ctx.cfg.detect.iou)),
        Task::Segment(dense) => segment(ctx, dense),
        Task::Predict(c) => {
            let (saved, model, store) = load_model(&c.checkpoint)?;
            require_causal(&model)?;
            let (train, test) = splits(ctx, c, &saved)?;
            let seed = saved.pretrain.train.seed;
            let head = train_prediction_head(&model, &store, &train, &ctx.cfg.probe, exec)?;
            let curve = predict_early(&model, &store, &head, &test, &RATIOS, exec)?;
            let mut r = RunReport::new("eval predict", ctx.digest.clone(), seed);
            let mut rows = Vec::new();
            for (&ratio, &acc) in curve.ratios.iter().zip(&curve.accuracy) {
                r.metric(format!("accuracy@{ratio:.1}"), acc);
                rows.push(vec![ratio, acc]);
            }
            let csv = ctx.out_dir.join("eval-predict.curve.csv");
            write_curve(&csv, &["ratio", "accuracy"], &rows)?;
            r.artifact("curve", &csv);
            finish(ctx, r)
        }
        Task::Transfer { common, target } => {
            let (model, store, train, test, seed) = frozen(ctx, common)?;
            let m = load_manifest(target)?;
            let (t_train, t_test) = (split(&m, &common.train_split)?, split(&m, &common.test_split)?);
            let source = linear_probe(&embed_labeled(&model, &store, &train, exec)?, &embed_labeled(&model, &store, &test, exec)?, &ctx.cfg.probe)?;
            let rep = transfer(&model, &store, &t_train, &t_test, &ctx.cfg.probe, exec)?;
            let mut r = RunReport::new("eval transfer", ctx.digest.clone(), seed);
            r.metric("source_probe_top1", source.accuracy);
            r.metric("probe_top1", rep.probe_top1);
            r.metric("knn_top1", rep.knn_top1);
            finish(ctx, r)
        }
        Task::Ensemble { checkpoints, data, train_split, test_split } => {
            if checkpoints.len() < 2 {
                bail!("an ensemble needs at least two --checkpoint arguments");
            }
            let mut r = RunReport::new("eval ensemble", ctx.digest.clone(), ctx.cfg.train.seed);
            let mut members = Vec::new();
            let mut labels = Vec::new();
            for (i, p) in checkpoints.iter().enumerate() {
                let (saved, model, store) = load_model(p)?;
                let m = eval_manifest(data.as_ref(), ctx, &saved)?;
                let train = embed_labeled(&model, &store, &split(&m, train_split)?, exec)?;
                let test = embed_labeled(&model, &store, &split(&m, test_split)?, exec)?;
                let res = linear_probe(&train, &test, &ctx.cfg.probe)?;
                r.metric(format!("member{i}_top1"), res.accuracy);
                let x = Mat::from_rows(&test.iter().map(|l| l.embedding.clone()).collect::<Vec<_>>());
                members.push(res.head.probs(&x)?);
                labels = test.iter().map(|l| l.label).collect();
            }
            let e = ensemble(&members)?;
            let correct = e.predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
            r.metric("top1", correct as f64 / labels.len().max(1) as f64);
            finish(ctx, r)
        }
    }
}

type Frozen = (Model, ParamStore, Vec<SkeletonSequence>, Vec<SkeletonSequence>, u64);

fn frozen(ctx: &Ctx, c: &Common) -> Result<Frozen> {
    let (saved, model, store) = load_model(&c.checkpoint)?;
    let (train, test) = splits(ctx, c, &saved)?;
    Ok((model, store, train, test, saved.pretrain.train.seed))
}

fn splits(ctx: &Ctx, c: &Common, saved: &SavedConfig) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
    let m = eval_manifest(c.data.as_ref(), ctx, saved)?;
    Ok((split(&m, &c.train_split)?, split(&m, &c.test_split)?))
}

/// Frame probabilities of every test video from a head trained on the
/// training videos, with each video's frame labels.
fn dense_model(ctx: &Ctx, d: &Dense, checkpoint: &Path) -> Result<(Vec<(String, FrameProbs, Vec<i64>)>, u64)> {
    let exec = Exec::available();
    let (saved, model, store) = load_model(checkpoint)?;
    let m = eval_manifest(d.data.as_ref(), ctx, &saved)?;
    let (train, test) = (split(&m, &d.train_split)?, split(&m, &d.test_split)?);
    let stride = ctx.cfg.detect.stride;
    let head = train_frame_head(&model, &store, &train, m.num_classes(), stride, &ctx.cfg.probe, exec)?;
    let out = test
        .iter()
        .map(|v| {
            let labels = v.frame_labels.clone().with_context(|| format!("test video {} has no frame labels", v.id))?;
            Ok((v.id.clone(), frame_probs(&model, &store, &head, v, stride, exec)?, labels))
        })
        .collect::<Result<_>>()?;
    Ok((out, saved.pretrain.train.seed))
}

fn truth_lines(path: &Path) -> Result<Vec<SegmentationLine>> {
    read_jsonl(path).with_context(|| format!("reading ground truth {}", path.display()))
}

fn detect(ctx: &Ctx, d: &Dense, iou: f64) -> Result<PathBuf> {
    let (preds, truth, seed): (Vec<VideoDetections>, Vec<VideoTruth>, u64) = match (&d.checkpoint, &d.predictions, &d.truth) {
        (_, Some(p), Some(t)) => {
            let lines: Vec<DetectionLine> = read_jsonl(p).with_context(|| format!("reading predictions {}", p.display()))?;
            let truth = truth_lines(t)?.iter().map(SegmentationLine::to_truth).collect();
            (lines.into_iter().map(VideoDetections::from).collect(), truth, ctx.cfg.train.seed)
        }
        (Some(c), _, _) => {
            let (videos, seed) = dense_model(ctx, d, c)?;
            let pp = &ctx.cfg.detect.postprocess;
            let preds: Vec<VideoDetections> =
                videos.iter().map(|(id, fp, _)| VideoDetections { id: id.clone(), triplets: postprocess_segments(fp, pp) }).collect();
            let truth = videos.iter().map(|(id, _, l)| VideoTruth { id: id.clone(), segments: gt_segments(l) }).collect();
            (preds, truth, seed)
        }
        _ => bail!("eval detect needs --checkpoint, or --predictions with --truth"),
    };
    let mut r = RunReport::new("eval detect", ctx.digest.clone(), seed);
    if d.checkpoint.is_some() {
        let path = ctx.out_dir.join("eval-detect.predictions.jsonl");
        write_jsonl(&path, &preds.iter().map(DetectionLine::from).collect::<Vec<_>>())?;
        r.artifact("predictions", &path);
    }
    let head = eval_detection_map(&preds, &truth, iou)?;
    r.metric("iou", iou);
    r.metric("mAP_a", head.map_a);
    r.metric("mAP_v", head.map_v);
    let mut rows = Vec::new();
    for t in IOU_THRESHOLDS {
        let m = eval_detection_map(&preds, &truth, t)?;
        r.metric(format!("mAP_a@{t:.1}"), m.map_a);
        r.metric(format!("mAP_v@{t:.1}"), m.map_v);
        rows.push(vec![t, m.map_a, m.map_v]);
    }
    let csv = ctx.out_dir.join("eval-detect.curve.csv");
    write_curve(&csv, &["iou", "mAP_a", "mAP_v"], &rows)?;
    r.artifact("curve", &csv);
    finish(ctx, r)
}

fn segment(ctx: &Ctx, d: &Dense) -> Result<PathBuf> {
    let (pairs, seed): (Vec<(String, Vec<i64>, Vec<i64>)>, u64) = match (&d.checkpoint, &d.predictions, &d.truth) {
        (_, Some(p), Some(t)) => {
            let preds: Vec<SegmentationLine> = read_jsonl(p).with_context(|| format!("reading predictions {}", p.display()))?;
            let truth: BTreeMap<String, Vec<i64>> = truth_lines(t)?.into_iter().map(|l| (l.id, l.frame_labels)).collect();
            let pairs = preds
                .into_iter()
                .map(|l| {
                    let gt = truth.get(&l.id).with_context(|| format!("no ground truth for video {}", l.id))?.clone();
                    Ok((l.id, l.frame_labels, gt))
                })
                .collect::<Result<_>>()?;
            (pairs, ctx.cfg.train.seed)
        }
        (Some(c), _, _) => {
            let (videos, seed) = dense_model(ctx, d, c)?;
            (videos.into_iter().map(|(id, fp, l)| (id, labels_from_probs(&fp), l)).collect(), seed)
        }
        _ => bail!("eval segment needs --checkpoint, or --predictions with --truth"),
    };
    if pairs.is_empty() {
        bail!("no videos to evaluate");
    }
    let mut r = RunReport::new("eval segment", ctx.digest.clone(), seed);
    if d.checkpoint.is_some() {
        let path = ctx.out_dir.join("eval-segment.predictions.jsonl");
        let lines: Vec<SegmentationLine> = pairs.iter().map(|(id, p, _)| SegmentationLine { id: id.clone(), frame_labels: p.clone() }).collect();
        write_jsonl(&path, &lines)?;
        r.artifact("predictions", &path);
    }
    let per: Vec<SegmentationMetrics> =
        pairs.iter().map(|(id, p, g)| eval_segmentation(p, g).with_context(|| format!("video {id}"))).collect::<Result<_>>()?;
    let n = per.len() as f64;
    let mean = |f: fn(&SegmentationMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    r.metric("acc", mean(|m| m.acc));
    r.metric("edit", mean(|m| m.edit));
    r.metric("f1@10", mean(|m| m.f1_10));
    r.metric("f1@25", mean(|m| m.f1_25));
    r.metric("f1@50", mean(|m| m.f1_50));
    finish(ctx, r)
}

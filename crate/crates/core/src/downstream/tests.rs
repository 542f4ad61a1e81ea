use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::pretrain::PretrainConfig;
use crate::skelio::{synth_dataset, SynthSpec};
use crate::tensor::Mat;

fn lab(id: &str, label: usize, e: &[f64]) -> Labeled {
    Labeled { id: id.into(), label, embedding: e.to_vec() }
}

fn trip(start: usize, end: usize, class: usize, score: f64) -> SegmentTriplet {
    SegmentTriplet { start, end, class, score }
}

fn seg(start: usize, end: usize, class: usize) -> Segment {
    Segment { start, end, class }
}

fn det(id: &str, t: Vec<SegmentTriplet>) -> VideoDetections {
    VideoDetections { id: id.into(), triplets: t }
}

fn truth(id: &str, s: Vec<Segment>) -> VideoTruth {
    VideoTruth { id: id.into(), segments: s }
}

// ---------- linear probe ----------

#[test]
fn probe_separates_separable_classes() {
    let train: Vec<Labeled> = (0..20).map(|i| lab(&format!("a{i}"), i % 2, &[if i % 2 == 0 { -1.0 } else { 1.0 } + 0.01 * i as f64, 0.3])).collect();
    let test = vec![lab("t0", 0, &[-0.8, 0.1]), lab("t1", 1, &[0.9, -0.2])];
    let r = linear_probe(&train, &test, &ProbeConfig::default()).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.predictions, vec![0, 1]);
}

#[test]
fn probe_on_shuffled_labels_is_near_chance() {
    let mut accs = Vec::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |n: usize, tag: &str| -> Vec<Labeled> {
            (0..n).map(|i| lab(&format!("{tag}{i}"), i % 4, &(0..8).map(|_| rng.random::<f64>()).collect::<Vec<_>>())).collect()
        };
        let train = mk(80, "a");
        let test = mk(80, "b");
        accs.push(linear_probe(&train, &test, &ProbeConfig { epochs: 100, ..ProbeConfig::default() }).unwrap().accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() <= 0.1, "mean shuffled accuracy {mean}");
}

#[test]
fn probe_memorizes_its_training_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let set: Vec<Labeled> = (0..40).map(|i| lab(&format!("s{i}"), i % 4, &(0..16).map(|_| rng.random::<f64>()).collect::<Vec<_>>())).collect();
    let other: Vec<Labeled> = (0..40).map(|i| lab(&format!("o{i}"), i % 4, &(0..16).map(|_| rng.random::<f64>()).collect::<Vec<_>>())).collect();
    let cfg = ProbeConfig::default();
    let same = linear_probe(&set, &set, &cfg).unwrap().accuracy;
    let shuffled = linear_probe(&set, &other, &cfg).unwrap().accuracy;
    assert!(same >= shuffled);
    assert!(same > 0.9);
}

#[test]
fn probe_rejects_test_class_missing_from_train() {
    let train = vec![lab("a", 0, &[0.0]), lab("b", 1, &[1.0])];
    let test = vec![lab("c", 2, &[0.5])];
    let err = linear_probe(&train, &test, &ProbeConfig::default()).unwrap_err().to_string();
    assert!(err.contains("class 2"), "{err}");
}

/// The full-batch gradient used inside the probe, against a central
/// difference of the mean cross-entropy.
#[test]
fn probe_head_is_stationary_after_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Mat::from_vec(12, 3, (0..36).map(|_| rng.random::<f64>() - 0.5).collect());
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let cfg = ProbeConfig { epochs: 5000, lr: 0.01, weight_decay: 0.1 };
    let head = LinearHead::fit(&x, &labels, 3, &cfg).unwrap();
    let objective = |h: &LinearHead| {
        let p = h.probs(&x).unwrap();
        let ce = -(0..12).map(|i| p[(i, labels[i])].ln()).sum::<f64>() / 12.0;
        ce + 0.5 * cfg.weight_decay * h.weight.as_slice().iter().map(|w| w * w).sum::<f64>()
    };
    for k in 0..head.weight.len() {
        let mut plus = head.clone();
        plus.weight.as_mut_slice()[k] += 1e-5;
        let mut minus = head.clone();
        minus.weight.as_mut_slice()[k] -= 1e-5;
        let g = (objective(&plus) - objective(&minus)) / 2e-5;
        assert!(g.abs() < 1e-4, "weight {k} gradient {g}");
    }
}

// ---------- kNN ----------

#[test]
fn knn_exact_match_ranks_first() {
    let gallery = vec![lab("g0", 0, &[1.0, 2.0]), lab("g1", 1, &[-3.0, 0.5]), lab("g2", 2, &[0.2, 0.2])];
    let r = knn_retrieve(&[lab("q", 1, &[-3.0, 0.5])], &gallery, 3).unwrap();
    assert_eq!(r.ranked[0][0], 1);
    assert_eq!(r.top1, 1.0);
}

#[test]
fn knn_hand_computed_cosine() {
    // cos((1,0),(0.9,0.1)) = 0.9/sqrt(0.82) ≈ 0.994 > cos((1,0),(0,1)) = 0
    let gallery = vec![lab("a", 0, &[0.9, 0.1]), lab("b", 1, &[0.0, 1.0])];
    let r = knn_retrieve(&[lab("q", 0, &[1.0, 0.0])], &gallery, 2).unwrap();
    assert_eq!(r.ranked[0], vec![0, 1]);
    assert_eq!(r.top1, 1.0);
}

#[test]
fn knn_ties_go_to_lower_index_and_zero_norm_is_named() {
    let gallery = vec![lab("a", 0, &[1.0, 1.0]), lab("b", 1, &[2.0, 2.0])];
    let r = knn_retrieve(&[lab("q", 1, &[3.0, 3.0])], &gallery, 2).unwrap();
    assert_eq!(r.ranked[0], vec![0, 1]);
    assert_eq!(r.top1, 0.0);
    let err = knn_retrieve(&[lab("ghost", 0, &[0.0, 0.0])], &gallery, 1).unwrap_err().to_string();
    assert!(err.contains("ghost"), "{err}");
}

proptest! {
    /// Power-of-two factors scale each norm exactly, so every cosine and
    /// thus every ranking must be bit-identical.
    #[test]
    fn knn_rankings_are_scale_invariant(
        q in prop::collection::vec(prop::collection::vec(0.1f64..2.0, 4), 1..5),
        g in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 2..8),
        exps in prop::collection::vec(-4i32..6, 13),
    ) {
        let gallery: Vec<Labeled> = g.iter().enumerate().map(|(i, e)| lab(&format!("g{i}"), i % 3, e)).collect();
        let queries: Vec<Labeled> = q.iter().enumerate().map(|(i, e)| lab(&format!("q{i}"), i % 3, e)).collect();
        let a = knn_retrieve(&queries, &gallery, gallery.len()).unwrap();
        let scale = |set: &[Labeled], off: usize| -> Vec<Labeled> {
            set.iter().enumerate().map(|(i, l)| {
                let f = 2f64.powi(exps[(i + off) % exps.len()]);
                lab(&l.id, l.label, &l.embedding.iter().map(|v| v * f).collect::<Vec<_>>())
            }).collect()
        };
        let b = knn_retrieve(&scale(&queries, 0), &scale(&gallery, 5), gallery.len()).unwrap();
        prop_assert_eq!(&a.ranked, &b.ranked);
        prop_assert_eq!(a.top1, b.top1);
    }
}

// ---------- fine-tuning subsets ----------

#[test]
fn stratified_subset_counts_and_determinism() {
    let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
    let a = stratified_subset(&labels, 0.1, 5).unwrap();
    let b = stratified_subset(&labels, 0.1, 5).unwrap();
    assert_eq!(a, b);
    // 25 per class, round(2.5) = 3 (round half away from zero)
    for c in 0..4 {
        assert_eq!(a.indices.iter().filter(|&&i| labels[i] == c).count(), 3);
    }
    assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
    assert_ne!(a, stratified_subset(&labels, 0.1, 6).unwrap());
    let full = stratified_subset(&labels, 1.0, 5).unwrap();
    assert_eq!(full.indices, (0..100).collect::<Vec<_>>());
    let tiny = stratified_subset(&labels, 0.01, 5).unwrap();
    assert!(tiny.indices.is_empty());
    assert_eq!(tiny.dropped_classes, vec![0, 1, 2, 3]);
    assert!(stratified_subset(&labels, 0.0, 0).is_err());
    assert!(stratified_subset(&labels, 1.5, 0).is_err());
}

fn tiny_setup() -> (Model, crate::params::ParamStore, Vec<crate::skelio::SkeletonSequence>, Vec<crate::skelio::SkeletonSequence>) {
    let d = synth_dataset(&SynthSpec { classes: 3, per_class: 4, frames: 12, joints: 5, untrimmed_videos: 2, ..SynthSpec::default() }).unwrap();
    let (model, store) = Model::new(&PretrainConfig::tiny(), &d.manifest.edges).unwrap();
    (model, store, d.train, d.untrimmed_test)
}

#[test]
fn full_fraction_equals_plain_finetune() {
    let (model, store, train, _) = tiny_setup();
    let cfg = FinetuneConfig { epochs: 2, batch_size: 8, ..FinetuneConfig::default() };
    let a = finetune(&model, &store, &train, &train, &cfg, Exec::Parallel).unwrap();
    let b = finetune_semi(&model, &store, &train, &train, 1.0, &cfg, Exec::Sequential).unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(a.train_records, train.len());
    let half = finetune_semi(&model, &store, &train, &train, 0.5, &cfg, Exec::Parallel).unwrap();
    // two views per id are kept together
    assert_eq!(half.train_records, 2 * half.subset.indices.len());
}

// ---------- sliding windows ----------

#[test]
fn window_starts_cover_the_sequence() {
    assert_eq!(window_starts(10, 4, 4).unwrap(), vec![0, 4, 6]);
    assert_eq!(window_starts(12, 4, 4).unwrap(), vec![0, 4, 8]);
    assert_eq!(window_starts(3, 4, 2).unwrap(), vec![0]);
    assert_eq!(window_starts(9, 4, 2).unwrap(), vec![0, 2, 4, 5]);
    assert!(window_starts(9, 4, 0).is_err());
}

fn row_probs(rows: &[&[f64]]) -> Mat {
    Mat::from_rows(rows)
}

#[test]
fn tiling_windows_concatenate() {
    let a = row_probs(&[&[0.2, 0.8], &[0.6, 0.4]]);
    let b = row_probs(&[&[0.1, 0.9], &[0.5, 0.5]]);
    let out = average_windows(4, &[(0, a.clone()), (2, b.clone())]).unwrap();
    assert_eq!(out, Mat::vstack(&[&a, &b]));
}

#[test]
fn identical_overlapping_windows_leave_probs_unchanged() {
    let a = row_probs(&[&[0.25, 0.75], &[0.5, 0.5], &[1.0, 0.0]]);
    let out = average_windows(3, &[(0, a.clone()), (0, a.clone())]).unwrap();
    for (x, y) in out.as_slice().iter().zip(a.as_slice()) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn overlapping_windows_match_hand_average() {
    // window 0 covers frames 0..3, window 1 covers 1..4
    let w0 = row_probs(&[&[0.1, 0.2, 0.7], &[0.3, 0.3, 0.4], &[0.5, 0.25, 0.25]]);
    let w1 = row_probs(&[&[0.7, 0.2, 0.1], &[0.0, 0.5, 0.5], &[0.2, 0.2, 0.6]]);
    let out = average_windows(4, &[(0, w0), (1, w1)]).unwrap();
    let expect = [[0.1, 0.2, 0.7], [0.5, 0.25, 0.25], [0.25, 0.375, 0.375], [0.2, 0.2, 0.6]];
    for t in 0..4 {
        for c in 0..3 {
            assert!((out[(t, c)] - expect[t][c]).abs() < 1e-9, "({t},{c})");
        }
    }
}

#[test]
fn padding_rows_are_dropped() {
    let w = row_probs(&[&[0.3, 0.7], &[0.4, 0.6], &[0.9, 0.1], &[0.9, 0.1]]);
    let out = average_windows(2, &[(0, w)]).unwrap();
    assert_eq!(out.rows(), 2);
    assert_eq!(out.row(1), &[0.4, 0.6]);
}

#[test]
fn frame_probs_on_a_model_are_distributions() {
    let (model, store, _, videos) = tiny_setup();
    let head = train_frame_head(&model, &store, &videos, 3, 3, &ProbeConfig { epochs: 20, ..ProbeConfig::default() }, Exec::Parallel).unwrap();
    assert_eq!(head.classes(), 4);
    let v = &videos[0];
    let fp = frame_probs(&model, &store, &head, v, 2, Exec::Parallel).unwrap();
    assert_eq!(fp.frames(), v.len());
    for row in fp.probs().iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    // stride = T tiles the video: each non-final window is used alone
    let t = model.encoder.config().frames;
    let tiled = frame_probs(&model, &store, &head, v, t, Exec::Sequential).unwrap();
    let direct = head.probs(&frame_features(&model, &store, &v.window(t, t)).unwrap()).unwrap();
    for r in 0..t {
        for c in 0..4 {
            assert!((tiled.probs()[(t + r, c)] - direct[(r, c)]).abs() < 1e-12);
        }
    }
    // a video shorter than one window still gets one row per real frame
    let short = v.window(0, t - 2);
    assert_eq!(frame_probs(&model, &store, &head, &short, 1, Exec::Parallel).unwrap().frames(), t - 2);
}

// ---------- post-processing ----------

fn probs_with_background(frames: usize, classes: usize, runs: &[(usize, usize, usize, f64)]) -> FrameProbs {
    let mut m = Mat::zeros(frames, classes + 1);
    for t in 0..frames {
        m[(t, classes)] = 1.0;
    }
    for &(s, e, c, p) in runs {
        for t in s..e {
            m.row_mut(t).iter_mut().for_each(|v| *v = 0.0);
            m[(t, c)] = p;
            m[(t, classes)] = 1.0 - p;
        }
    }
    FrameProbs::new(m).unwrap()
}

#[test]
fn background_only_gives_no_segments() {
    let fp = probs_with_background(20, 4, &[]);
    assert!(postprocess_segments(&fp, &PostprocessConfig::default()).is_empty());
}

#[test]
fn one_run_becomes_one_triplet() {
    let fp = probs_with_background(20, 5, &[(5, 12, 3, 0.8)]);
    let got = postprocess_segments(&fp, &PostprocessConfig::default());
    assert_eq!(got.len(), 1);
    let t = got[0];
    assert_eq!((t.start, t.end, t.class), (5, 12, 3));
    assert!((t.score - 0.8).abs() < 1e-12);
}

#[test]
fn short_runs_are_dropped_and_smoothing_removes_blips() {
    let fp = probs_with_background(10, 2, &[(4, 5, 1, 0.9)]);
    assert!(postprocess_segments(&fp, &PostprocessConfig { smoothing: 1, min_length: 2 }).is_empty());
    assert_eq!(postprocess_segments(&fp, &PostprocessConfig { smoothing: 1, min_length: 1 }).len(), 1);
    // a one-frame background blip inside a run is filled in by a width-3 median
    let fp = probs_with_background(12, 2, &[(2, 6, 0, 0.9), (7, 10, 0, 0.9)]);
    let got = postprocess_segments(&fp, &PostprocessConfig { smoothing: 3, min_length: 1 });
    assert_eq!(got.len(), 1);
    assert_eq!((got[0].start, got[0].end), (2, 10));
}

// ---------- detection mAP ----------

#[test]
fn iou_hand_values() {
    assert!((temporal_iou((0, 8), (0, 10)) - 0.8).abs() < 1e-15);
    assert!((temporal_iou((5, 20), (0, 10)) - 0.25).abs() < 1e-15);
    assert_eq!(temporal_iou((0, 5), (5, 9)), 0.0);
}

#[test]
fn single_instance_fixtures() {
    let gt = [truth("v", vec![seg(0, 10, 0)])];
    let hit = eval_detection_map(&[det("v", vec![trip(0, 8, 0, 0.9)])], &gt, 0.5).unwrap();
    assert_eq!((hit.map_a, hit.map_v), (1.0, 1.0));
    let miss = eval_detection_map(&[det("v", vec![trip(5, 20, 0, 0.9)])], &gt, 0.5).unwrap();
    assert_eq!((miss.map_a, miss.map_v), (0.0, 0.0));
}

#[test]
fn perfect_detector_scores_one() {
    let gt = vec![truth("a", vec![seg(0, 10, 0), seg(20, 30, 1)]), truth("b", vec![seg(5, 9, 1)])];
    let preds: Vec<VideoDetections> =
        gt.iter().map(|v| det(&v.id, v.segments.iter().map(|s| trip(s.start, s.end, s.class, 1.0)).collect())).collect();
    let m = eval_detection_map(&preds, &gt, 0.7).unwrap();
    assert_eq!((m.map_a, m.map_v), (1.0, 1.0));
}

/// Independent AP: 11-free, all-point envelope over explicit PR points.
fn oracle_ap(hits: &[bool], n_gt: usize) -> f64 {
    let mut prec = Vec::new();
    let mut rec = Vec::new();
    let mut tp = 0.0;
    for (k, h) in hits.iter().enumerate() {
        if *h {
            tp += 1.0;
        }
        prec.push(tp / (k + 1) as f64);
        rec.push(tp / n_gt as f64);
    }
    let mut ap = 0.0;
    let mut r_prev = 0.0;
    for k in 0..hits.len() {
        let p_interp = prec[k..].iter().cloned().fold(0.0, f64::max);
        ap += (rec[k] - r_prev) * p_interp;
        r_prev = rec[k];
    }
    ap
}

#[test]
fn average_precision_matches_oracle() {
    let cases: [(&[bool], usize); 4] = [(&[true, false, true], 2), (&[false, true, true, false, true], 4), (&[], 3), (&[false, false], 1)];
    for (hits, n) in cases {
        assert!((average_precision(hits, n) - oracle_ap(hits, n)).abs() < 1e-15);
    }
    // ranks: TP, FP, TP with 2 GT → 1·0.5 + (2/3)·0.5
    assert!((average_precision(&[true, false, true], 2) - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
}

#[test]
fn two_class_fixture_by_hand() {
    // class 0: preds 0.9 TP, 0.8 FP (duplicate), 0.7 TP → AP = 0.5·1 + 0.5·2/3
    // class 1: single GT missed, one FP → AP 0
    let gt = [truth("a", vec![seg(0, 10, 0), seg(30, 40, 0), seg(50, 60, 1)])];
    let preds = [det("a", vec![trip(0, 10, 0, 0.9), trip(1, 10, 0, 0.8), trip(30, 39, 0, 0.7), trip(0, 10, 1, 0.95)])];
    let m = eval_detection_map(&preds, &gt, 0.5).unwrap();
    let ap0 = 0.5 + 1.0 / 3.0;
    assert!((m.per_class[&0] - ap0).abs() < 1e-12);
    assert_eq!(m.per_class[&1], 0.0);
    assert!((m.map_a - ap0 / 2.0).abs() < 1e-12);
    assert!((m.map_v - ap0 / 2.0).abs() < 1e-12);
}

#[test]
fn per_video_average_differs_from_pooled() {
    // video a: class 0 found; video b: class 0 missed, prediction scores higher
    let gt = [truth("a", vec![seg(0, 10, 0)]), truth("b", vec![seg(0, 10, 0)])];
    let preds = [det("a", vec![trip(0, 10, 0, 0.5)]), det("b", vec![trip(20, 30, 0, 0.9)])];
    let m = eval_detection_map(&preds, &gt, 0.5).unwrap();
    // pooled ranks: FP(0.9), TP(0.5) → recall 0.5 at precision 0.5
    assert!((m.map_a - 0.25).abs() < 1e-12);
    assert!((m.map_v - 0.5).abs() < 1e-12);
}

#[test]
fn detection_rejects_bad_inputs() {
    let gt = [truth("a", vec![seg(0, 10, 0)])];
    assert!(eval_detection_map(&[], &gt, 0.0).is_err());
    assert!(eval_detection_map(&[], &gt, 1.0).is_err());
    assert!(eval_detection_map(&[det("zzz", vec![])], &gt, 0.5).is_err());
    assert_eq!(eval_detection_map(&[], &gt, 0.5).unwrap().map_a, 0.0);
}

fn arb_fixture() -> impl Strategy<Value = (Vec<VideoTruth>, Vec<VideoDetections>)> {
    let interval = (0usize..60, 1usize..25).prop_map(|(s, l)| (s, s + l));
    let video = (prop::collection::vec((interval.clone(), 0usize..3), 1..5), prop::collection::vec((interval, 0usize..3, 0.0f64..1.0), 0..8));
    prop::collection::vec(video, 1..4).prop_map(|vs| {
        let mut gts = Vec::new();
        let mut preds = Vec::new();
        for (i, (g, p)) in vs.into_iter().enumerate() {
            let id = format!("v{i}");
            gts.push(truth(&id, g.into_iter().map(|((s, e), c)| seg(s, e, c)).collect()));
            preds.push(det(&id, p.into_iter().map(|((s, e), c, sc)| trip(s, e, c, sc)).collect()));
        }
        (gts, preds)
    })
}

proptest! {
    #[test]
    fn map_is_monotone_in_threshold((gt, preds) in arb_fixture()) {
        let thresholds = [0.3, 0.4, 0.5, 0.6, 0.7];
        let maps: Vec<DetectionMap> = thresholds.iter().map(|&t| eval_detection_map(&preds, &gt, t).unwrap()).collect();
        for w in maps.windows(2) {
            prop_assert!(w[0].map_a >= w[1].map_a - 1e-12, "{} < {}", w[0].map_a, w[1].map_a);
            prop_assert!(w[0].map_v >= w[1].map_v - 1e-12);
        }
    }

    #[test]
    fn map_ignores_prediction_order_and_monotone_rescoring((gt, preds) in arb_fixture(), seed in 0u64..1000) {
        let base = eval_detection_map(&preds, &gt, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = preds.clone();
        for v in &mut shuffled {
            rand::seq::SliceRandom::shuffle(v.triplets.as_mut_slice(), &mut rng);
        }
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        prop_assert_eq!(&eval_detection_map(&shuffled, &gt, 0.5).unwrap(), &base);
        let rescored: Vec<VideoDetections> = preds.iter().map(|v| det(&v.id, v.triplets.iter().map(|t| trip(t.start, t.end, t.class, t.score.powi(3) * 0.5)).collect())).collect();
        prop_assert_eq!(&eval_detection_map(&rescored, &gt, 0.5).unwrap(), &base);
    }
}

// ---------- segmentation ----------

#[test]
fn perfect_segmentation_is_maximal() {
    let gt = [-1, 0, 0, 1, 1, 1, -1, 2, 2];
    let m = eval_segmentation(&gt, &gt).unwrap();
    assert_eq!(m, SegmentationMetrics { acc: 100.0, edit: 100.0, f1_10: 100.0, f1_25: 100.0, f1_50: 100.0 });
}

#[test]
fn missing_middle_segment_edit() {
    // GT A B C, prediction A C with A and C aligned
    let gt = [0, 0, 0, 1, 1, 1, 2, 2, 2];
    let pred = [0, 0, 0, 0, 0, 2, 2, 2, 2];
    let m = eval_segmentation(&pred, &gt).unwrap();
    assert!((m.edit - 200.0 / 3.0).abs() < 1e-9);
    assert!((m.acc - 600.0 / 9.0).abs() < 1e-9);
}

#[test]
fn iou_point_three_passes_low_thresholds_only() {
    // GT [0,10), prediction [7,10) has IoU 0.3
    let gt: Vec<i64> = vec![0; 10];
    let pred: Vec<i64> = (0..10).map(|t| if t >= 7 { 0 } else { -1 }).collect();
    let m = eval_segmentation(&pred, &gt).unwrap();
    assert_eq!((m.f1_10, m.f1_25, m.f1_50), (100.0, 100.0, 0.0));
    assert!((m.acc - 30.0).abs() < 1e-12);
    assert_eq!(m.edit, 100.0);
}

#[test]
fn oversegmentation_hand_values() {
    // GT one segment of class 1 over [0,8); prediction splits it in two
    let gt = [1; 8];
    let pred = [1, 1, 1, 1, 2, 1, 1, 1];
    let m = eval_segmentation(&pred, &gt).unwrap();
    // segments: pred [1,2,1] vs gt [1] → distance 2, edit (1 - 2/3)·100
    assert!((m.edit - 100.0 / 3.0).abs() < 1e-9);
    // first pred [0,4) IoU 0.5 → TP at 10/25/50; others FP: P = 1/3, R = 1 → F1 = 50
    assert!((m.f1_50 - 50.0).abs() < 1e-9);
    assert!((m.f1_10 - 50.0).abs() < 1e-9);
    assert!((m.acc - 87.5).abs() < 1e-12);
}

#[test]
fn background_only_segmentation() {
    let m = eval_segmentation(&[-1, -1], &[-1, -1]).unwrap();
    assert_eq!((m.edit, m.f1_50), (100.0, 100.0));
    let m = eval_segmentation(&[0, 0], &[-1, -1]).unwrap();
    assert_eq!((m.acc, m.edit, m.f1_10), (0.0, 0.0, 0.0));
    assert!(eval_segmentation(&[0], &[0, 0]).is_err());
}

// ---------- early prediction ----------

#[test]
fn observed_frame_counts() {
    assert_eq!(observed_frames(0.7, 10).unwrap(), 7);
    assert_eq!(observed_frames(0.1, 32).unwrap(), 4);
    assert_eq!(observed_frames(0.3, 10).unwrap(), 3);
    assert_eq!(observed_frames(1.0, 32).unwrap(), 32);
    assert_eq!(observed_frames(0.01, 6).unwrap(), 1);
    assert!(observed_frames(0.0, 10).is_err());
    assert!(observed_frames(1.1, 10).is_err());
    assert!(observed_frames(f64::NAN, 10).is_err());
}

#[test]
fn early_and_late_evidence() {
    // frames 0..2 favour A (class 0), frames 2..10 favour B
    let mut p = Mat::zeros(10, 2);
    for t in 0..10 {
        let a = if t < 2 { 0.9 } else { 0.3 };
        p[(t, 0)] = a;
        p[(t, 1)] = 1.0 - a;
    }
    // hand averages: r=0.2 → A 0.9; r=1.0 → A (1.8 + 2.4)/10 = 0.42
    assert!((aggregate_prefix(&p, 2)[0] - 0.9).abs() < 1e-15);
    assert!((aggregate_prefix(&p, 10)[0] - 0.42).abs() < 1e-15);
    let curve = prediction_curve(&[(p.clone(), 0)], &[0.2, 1.0]).unwrap();
    assert_eq!(curve.accuracy, vec![1.0, 0.0]);
    let curve = prediction_curve(&[(p, 1)], &[0.2, 1.0]).unwrap();
    assert_eq!(curve.accuracy, vec![0.0, 1.0]);
}

#[test]
fn constant_evidence_is_right_at_every_ratio() {
    let mut p = Mat::zeros(8, 3);
    for t in 0..8 {
        p.row_mut(t).copy_from_slice(&[0.05, 0.9, 0.05]);
    }
    let curve = prediction_curve(&[(p, 1)], &RATIOS).unwrap();
    assert!(curve.accuracy.iter().all(|&a| a == 1.0));
    assert!(prediction_curve(&[], &RATIOS).is_err());
    assert!(prediction_curve(&[(Mat::zeros(1, 1), 0)], &[0.5, 0.5]).is_err());
}

#[test]
fn prediction_needs_causal_model() {
    let (model, store, train, _) = tiny_setup();
    let err = train_prediction_head(&model, &store, &train, &ProbeConfig::default(), Exec::Parallel).unwrap_err().to_string();
    assert!(err.contains("encoder.causal"), "{err}");
}

#[test]
fn full_ratio_equals_aggregated_recognition() {
    let d = synth_dataset(&SynthSpec { classes: 3, per_class: 4, frames: 12, joints: 5, ..SynthSpec::default() }).unwrap();
    let mut cfg = PretrainConfig::tiny();
    cfg.encoder.causal = true;
    let (model, store) = Model::new(&cfg, &d.manifest.edges).unwrap();
    let head = train_prediction_head(&model, &store, &d.train, &ProbeConfig { epochs: 50, ..ProbeConfig::default() }, Exec::Parallel).unwrap();
    let curve = predict_early(&model, &store, &head, &d.test, &RATIOS, Exec::Parallel).unwrap();
    let full = d
        .test
        .iter()
        .filter(|s| {
            let p = head.probs(&frame_features(&model, &store, s).unwrap()).unwrap();
            argmax(&p.col_means()) == s.label.unwrap()
        })
        .count() as f64
        / d.test.len() as f64;
    assert_eq!(curve.accuracy[9], full);
    assert_eq!(curve.ratios, RATIOS.to_vec());
}

// ---------- ensemble ----------

#[test]
fn ensemble_cases() {
    let one = Mat::from_rows(&[[0.2, 0.8], [0.7, 0.3]]);
    let e = ensemble(std::slice::from_ref(&one)).unwrap();
    assert_eq!(e.probs, one);
    assert_eq!(e.predictions, vec![1, 0]);

    let a = Mat::from_rows(&[[0.6, 0.4]]);
    let b = Mat::from_rows(&[[0.4, 0.6]]);
    assert_eq!(ensemble(&[a, b]).unwrap().predictions, vec![0]);

    let ms = [Mat::from_rows(&[[0.5, 0.25, 0.25]]), Mat::from_rows(&[[0.125, 0.75, 0.125]]), Mat::from_rows(&[[0.25, 0.25, 0.5]])];
    let e = ensemble(&ms).unwrap();
    let expect = [0.875 / 3.0, 1.25 / 3.0, 0.875 / 3.0];
    for (x, y) in e.probs.row(0).iter().zip(expect) {
        assert!((x - y).abs() < 1e-15);
    }
    assert_eq!(e.predictions, vec![1]);
    assert!(ensemble(&[Mat::zeros(1, 2), Mat::zeros(1, 3)]).is_err());
    assert!(ensemble(&[]).is_err());
}

// ---------- interchange ----------

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.jsonl");
    let v = det("vid", vec![trip(1, 4, 2, 0.25)]);
    interchange::write_jsonl(&path, &[interchange::DetectionLine::from(&v)]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "{\"id\":\"vid\",\"triplets\":[[1,4,2,0.25]]}\n");
    let back: Vec<interchange::DetectionLine> = interchange::read_jsonl(&path).unwrap();
    assert_eq!(VideoDetections::from(back[0].clone()), v);
    std::fs::write(&path, "{\"id\":1}\n").unwrap();
    let err = interchange::read_jsonl::<interchange::DetectionLine>(&path).unwrap_err().to_string();
    assert!(err.contains(":1:"), "{err}");
}

//! Evaluation heads and metrics: linear probe, kNN retrieval, fine-tuning,
//! temporal detection, segmentation, early prediction, ensembles and
//! transfer.

mod detection;
mod ensemble;
mod finetune;
pub mod interchange;
mod knn;
mod linear;
mod prediction;
mod segmentation;

pub use detection::{
    average_precision, average_windows, eval_detection_map, frame_features, frame_probs, gt_segments, postprocess_segments, temporal_iou,
    train_frame_head, window_starts, DetectionMap, FrameProbs, PostprocessConfig, SegmentTriplet, VideoDetections, VideoTruth,
};
pub use ensemble::{ensemble, Ensemble};
pub use finetune::{finetune, finetune_semi, stratified_subset, FinetuneConfig, FinetuneResult, Subset};
pub use knn::{knn_retrieve, KnnResult};
pub use linear::{linear_probe, LinearHead, ProbeConfig, ProbeResult};
pub use prediction::{
    aggregate_prefix, causal_frame_probs, observed_frames, predict_early, prediction_curve, require_causal, train_prediction_head, PredictionCurve,
    RATIOS,
};
pub use segmentation::{eval_segmentation, labels_from_probs, segments_of, Segment, SegmentationMetrics};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::parallel::{self, Exec};
use crate::params::ParamStore;
use crate::pretrain::Model;
use crate::skelio::SkeletonSequence;

/// One embedded, labeled sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeled {
    pub id: String,
    pub label: usize,
    pub embedding: Vec<f64>,
}

/// Instance embeddings of labeled sequences, in input order.
pub fn embed_labeled(model: &Model, store: &ParamStore, seqs: &[SkeletonSequence], exec: Exec) -> Result<Vec<Labeled>> {
    for s in seqs {
        model.check_record(s)?;
    }
    parallel::map(exec, seqs, |s| {
        let label = s.label.ok_or_else(|| Error::Record { id: s.id.clone(), message: "evaluation needs a label".into() })?;
        Ok(Labeled { id: s.id.clone(), label, embedding: model.embed(store, s)? })
    })
    .into_iter()
    .collect()
}

/// Recognition and retrieval on a second dataset with a frozen encoder.
#[derive(Clone, Debug, Serialize)]
pub struct TransferReport {
    pub probe_top1: f64,
    pub knn_top1: f64,
}

/// Linear probe and kNN of a pretrained model on another dataset's splits.
/// The skeleton layout must match the one the model was built for.
pub fn transfer(
    model: &Model,
    store: &ParamStore,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    probe: &ProbeConfig,
    exec: Exec,
) -> Result<TransferReport> {
    let train = embed_labeled(model, store, train, exec)?;
    let test = embed_labeled(model, store, test, exec)?;
    let probe_top1 = linear_probe(&train, &test, probe)?.accuracy;
    let knn_top1 = knn_retrieve(&test, &train, 1)?.top1;
    Ok(TransferReport { probe_top1, knn_top1 })
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of one row, in place.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests;

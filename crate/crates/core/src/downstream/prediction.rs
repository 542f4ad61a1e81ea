use serde::{Deserialize, Serialize};

use super::argmax;
use super::detection::frame_features;
use super::linear::{LinearHead, ProbeConfig};
use crate::error::{Error, Result};
use crate::parallel::{self, Exec};
use crate::params::ParamStore;
use crate::pretrain::Model;
use crate::skelio::SkeletonSequence;
use crate::tensor::Mat;

/// Observation ratios 10%, 20%, ..., 100%.
pub const RATIOS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Top-1 accuracy per observation ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurve {
    pub ratios: Vec<f64>,
    pub accuracy: Vec<f64>,
}

/// Frames visible at ratio `r` of `t`: `ceil(r·t)`, with products a rounding
/// error above an integer (0.7·10) counted as that integer.
pub fn observed_frames(r: f64, t: usize) -> Result<usize> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Eval(format!("observation ratio must lie in (0, 1], got {r}")));
    }
    Ok(((r * t as f64 - 1e-9).ceil() as usize).clamp(1, t.max(1)))
}

/// Mean of the first `n` rows.
pub fn aggregate_prefix(probs: &Mat, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; probs.cols()];
    for row in probs.iter_rows().take(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    out
}

/// Refuses models whose temporal stream can see future frames.
pub fn require_causal(model: &Model) -> Result<()> {
    if !model.encoder.config().causal {
        return Err(Error::Config("early prediction needs a causal encoder (encoder.causal = true); this model can see future frames".into()));
    }
    Ok(())
}

/// Per-frame class probabilities of a sequence resampled to the model length.
/// Row `t` depends only on frames up to `t`.
pub fn causal_frame_probs(model: &Model, store: &ParamStore, head: &LinearHead, seq: &SkeletonSequence) -> Result<Mat> {
    require_causal(model)?;
    model.check_record(seq)?;
    head.probs(&frame_features(model, store, seq)?)
}

/// Fits a linear head on frozen causal frame features, every frame carrying
/// its sequence's label.
pub fn train_prediction_head(model: &Model, store: &ParamStore, seqs: &[SkeletonSequence], probe: &ProbeConfig, exec: Exec) -> Result<LinearHead> {
    require_causal(model)?;
    let parts: Vec<(Mat, usize)> = parallel::map(exec, seqs, |s| {
        model.check_record(s)?;
        let label = s.label.ok_or_else(|| Error::Record { id: s.id.clone(), message: "prediction needs a label".into() })?;
        Ok((frame_features(model, store, s)?, label))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    if parts.is_empty() {
        return Err(Error::Eval("no training sequences".into()));
    }
    let classes = parts.iter().map(|p| p.1).max().unwrap_or(0) + 1;
    let x = Mat::vstack(&parts.iter().map(|(m, _)| m).collect::<Vec<_>>());
    let y: Vec<usize> = parts.iter().flat_map(|(m, l)| std::iter::repeat_n(*l, m.rows())).collect();
    LinearHead::fit(&x, &y, classes, probe)
}

/// Accuracy of the argmax of prefix-averaged probabilities at each ratio.
/// `probs` pairs each sequence's `[T][classes]` frame probabilities with
/// its label.
pub fn prediction_curve(probs: &[(Mat, usize)], ratios: &[f64]) -> Result<PredictionCurve> {
    if probs.is_empty() || ratios.is_empty() {
        return Err(Error::Eval("prediction curve needs sequences and ratios".into()));
    }
    if ratios.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Eval("ratios must be strictly increasing".into()));
    }
    let mut accuracy = Vec::with_capacity(ratios.len());
    for &r in ratios {
        let mut correct = 0;
        for (p, label) in probs {
            let n = observed_frames(r, p.rows())?;
            if argmax(&aggregate_prefix(p, n)) == *label {
                correct += 1;
            }
        }
        accuracy.push(correct as f64 / probs.len() as f64);
    }
    Ok(PredictionCurve { ratios: ratios.to_vec(), accuracy })
}

/// Early-prediction accuracy curve of a causal model with a frame head.
pub fn predict_early(
    model: &Model,
    store: &ParamStore,
    head: &LinearHead,
    seqs: &[SkeletonSequence],
    ratios: &[f64],
    exec: Exec,
) -> Result<PredictionCurve> {
    require_causal(model)?;
    let probs: Vec<(Mat, usize)> = parallel::map(exec, seqs, |s| {
        let label = s.label.ok_or_else(|| Error::Record { id: s.id.clone(), message: "prediction needs a label".into() })?;
        Ok((causal_frame_probs(model, store, head, s)?, label))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    prediction_curve(&probs, ratios)
}

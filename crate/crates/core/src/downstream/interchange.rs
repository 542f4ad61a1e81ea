//! JSONL interchange of predictions: one JSON object per line and video.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::detection::{gt_segments, SegmentTriplet, VideoDetections, VideoTruth};
use crate::error::{Error, Result};

/// `{"id", "triplets": [[start, end, class, score], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionLine {
    pub id: String,
    pub triplets: Vec<(usize, usize, usize, f64)>,
}

/// `{"id", "frame_labels": [...]}`, `-1` for background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationLine {
    pub id: String,
    pub frame_labels: Vec<i64>,
}

/// `{"id", "ratio_probs": {"0.1": [...], ...}}`; keys are ratios formatted
/// with one decimal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLine {
    pub id: String,
    pub ratio_probs: BTreeMap<String, Vec<f64>>,
}

impl From<&VideoDetections> for DetectionLine {
    fn from(v: &VideoDetections) -> Self {
        Self { id: v.id.clone(), triplets: v.triplets.iter().map(|t| (t.start, t.end, t.class, t.score)).collect() }
    }
}

impl From<DetectionLine> for VideoDetections {
    fn from(l: DetectionLine) -> Self {
        Self { id: l.id, triplets: l.triplets.into_iter().map(|(start, end, class, score)| SegmentTriplet { start, end, class, score }).collect() }
    }
}

impl SegmentationLine {
    /// Ground truth for detection from a frame labeling.
    pub fn to_truth(&self) -> VideoTruth {
        VideoTruth { id: self.id.clone(), segments: gt_segments(&self.frame_labels) }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one value per nonblank line, reporting the line of a bad record.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push(v);
    }
    Ok(out)
}

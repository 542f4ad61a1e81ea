//! Skeleton sequences: data model, file ingestion, modality derivation,
//! augmentation and synthetic data.

mod augment;
mod io;
mod manifest;
mod modality;
mod resample;
mod synth;

pub use augment::{augment, AugSpec, Range};
pub use io::{load_split, read_records, write_records};
pub use manifest::DatasetManifest;
pub use modality::{derive_bone, derive_motion, Modality};
pub use resample::temporal_resample;
pub use synth::{synth_dataset, synth_untrimmed, view_rotation, SynthData, SynthSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame label used for background frames.
pub const BACKGROUND: i64 = -1;

/// One skeleton clip: `frames[t][m][v][c]`, stored flat in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: Option<usize>,
    pub view: Option<u32>,
    pub subject: Option<u32>,
    /// Per-frame class index, [`BACKGROUND`] for background.
    pub frame_labels: Option<Vec<i64>>,
    frames: Vec<f64>,
    dims: Dims,
}

/// `(frames, persons, joints, coords)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub frames: usize,
    pub persons: usize,
    pub joints: usize,
    pub coords: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.frames * self.persons * self.joints * self.coords
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn offset(&self, t: usize, m: usize, v: usize) -> usize {
        ((t * self.persons + m) * self.joints + v) * self.coords
    }

    fn frame_len(&self) -> usize {
        self.persons * self.joints * self.coords
    }
}

impl SkeletonSequence {
    /// Builds a sequence from flat data, validating the type invariants.
    pub fn new(id: impl Into<String>, dims: Dims, frames: Vec<f64>) -> Result<Self> {
        let id = id.into();
        let fail = |message: String| Error::Record { id: id.clone(), message };
        if dims.frames == 0 || dims.persons == 0 || dims.joints == 0 {
            return Err(fail(format!("empty dimension in {dims:?}")));
        }
        if !matches!(dims.coords, 2 | 3) {
            return Err(fail(format!("coordinate dimension must be 2 or 3, got {}", dims.coords)));
        }
        if frames.len() != dims.len() {
            return Err(fail(format!("expected {} values for {dims:?}, got {}", dims.len(), frames.len())));
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite coordinate at flat index {i}")));
        }
        Ok(Self { id, label: None, view: None, subject: None, frame_labels: None, frames, dims })
    }

    pub fn zeros(id: impl Into<String>, dims: Dims) -> Self {
        Self { id: id.into(), label: None, view: None, subject: None, frame_labels: None, frames: vec![0.0; dims.len()], dims }
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims.frames
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.dims.frames == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.frames
    }

    /// Coordinates of joint `v` of person `m` at frame `t`.
    #[inline]
    pub fn joint(&self, t: usize, m: usize, v: usize) -> &[f64] {
        let o = self.dims.offset(t, m, v);
        &self.frames[o..o + self.dims.coords]
    }

    #[inline]
    pub fn joint_mut(&mut self, t: usize, m: usize, v: usize) -> &mut [f64] {
        let o = self.dims.offset(t, m, v);
        &mut self.frames[o..o + self.dims.coords]
    }

    /// All `M·V·C` values of frame `t`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.dims.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    /// All `V·C` values of person `m` at frame `t`.
    pub fn person(&self, t: usize, m: usize) -> &[f64] {
        let o = self.dims.offset(t, m, 0);
        &self.frames[o..o + self.dims.joints * self.dims.coords]
    }

    pub fn person_mut(&mut self, t: usize, m: usize) -> &mut [f64] {
        let o = self.dims.offset(t, m, 0);
        let n = self.dims.joints * self.dims.coords;
        &mut self.frames[o..o + n]
    }

    /// Whether person `m` at frame `t` is an absent (all-zero) slot.
    pub fn is_absent(&self, t: usize, m: usize) -> bool {
        self.person(t, m).iter().all(|&v| v == 0.0)
    }

    /// Frames `start..start + len`. Frames past the end are zero (absent)
    /// and labeled [`BACKGROUND`].
    pub fn window(&self, start: usize, len: usize) -> Self {
        let frame = self.dims.persons * self.dims.joints * self.dims.coords;
        let mut data = vec![0.0; len * frame];
        let have = self.dims.frames.saturating_sub(start).min(len);
        if have > 0 {
            data[..have * frame].copy_from_slice(&self.frames[start * frame..(start + have) * frame]);
        }
        let mut out = self.with_frames(len, data);
        out.frame_labels = self.frame_labels.as_ref().map(|l| {
            let mut w = l[start.min(l.len())..(start + have).min(l.len())].to_vec();
            w.resize(len, BACKGROUND);
            w
        });
        out
    }

    /// Same metadata, new coordinate data of possibly different length.
    pub(crate) fn with_frames(&self, frames_count: usize, data: Vec<f64>) -> Self {
        let dims = Dims { frames: frames_count, ..self.dims };
        debug_assert_eq!(data.len(), dims.len());
        Self {
            id: self.id.clone(),
            label: self.label,
            view: self.view,
            subject: self.subject,
            frame_labels: self.frame_labels.clone(),
            frames: data,
            dims,
        }
    }

    /// Subtracts the first person's root joint at frame 0 from every present
    /// person slice. Absent slices stay zero.
    pub fn center_on_root(&mut self, root: usize) {
        let origin = self.joint(0, 0, root).to_vec();
        for t in 0..self.dims.frames {
            for m in 0..self.dims.persons {
                if self.is_absent(t, m) {
                    continue;
                }
                for v in 0..self.dims.joints {
                    for (x, o) in self.joint_mut(t, m, v).iter_mut().zip(&origin) {
                        *x -= o;
                    }
                }
            }
        }
    }
}

/// Wire form of one JSONL record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct Record {
    pub id: String,
    pub label: Option<i64>,
    pub view: Option<u32>,
    pub subject: Option<u32>,
    pub frame_labels: Option<Vec<i64>>,
    pub frames: Vec<Vec<Vec<Vec<f64>>>>,
}

impl From<&SkeletonSequence> for Record {
    fn from(s: &SkeletonSequence) -> Self {
        let d = s.dims;
        let frames = (0..d.frames).map(|t| (0..d.persons).map(|m| (0..d.joints).map(|v| s.joint(t, m, v).to_vec()).collect()).collect()).collect();
        Record { id: s.id.clone(), label: s.label.map(|l| l as i64), view: s.view, subject: s.subject, frame_labels: s.frame_labels.clone(), frames }
    }
}

impl Record {
    /// Converts and checks the record against the expected `(M, V, C)`.
    pub fn into_sequence(self, persons: usize, joints: usize, coords: usize) -> Result<SkeletonSequence> {
        let id = self.id;
        let fail = |message: String| Error::Record { id: id.clone(), message };
        let t_raw = self.frames.len();
        let mut data = Vec::with_capacity(t_raw * persons * joints * coords);
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.len() != persons {
                return Err(fail(format!("frame {t} has {} persons, manifest expects {persons}", frame.len())));
            }
            for (m, person) in frame.iter().enumerate() {
                if person.len() != joints {
                    return Err(fail(format!("frame {t} person {m} has {} joints, manifest expects {joints}", person.len())));
                }
                for (v, joint) in person.iter().enumerate() {
                    if joint.len() != coords {
                        return Err(fail(format!("frame {t} person {m} joint {v} has {} coordinates, manifest expects {coords}", joint.len())));
                    }
                    data.extend_from_slice(joint);
                }
            }
        }
        let label = match self.label {
            Some(l) if l < 0 => return Err(fail(format!("negative label {l}"))),
            other => other.map(|l| l as usize),
        };
        if let Some(fl) = &self.frame_labels {
            if fl.len() != t_raw {
                return Err(fail(format!("frame_labels has {} entries for {t_raw} frames", fl.len())));
            }
            if let Some(bad) = fl.iter().find(|&&l| l < BACKGROUND) {
                return Err(fail(format!("invalid frame label {bad}")));
            }
        }
        let dims = Dims { frames: t_raw, persons, joints, coords };
        let mut seq = SkeletonSequence::new(id.clone(), dims, data)?;
        seq.label = label;
        seq.view = self.view;
        seq.subject = self.subject;
        seq.frame_labels = self.frame_labels;
        Ok(seq)
    }
}

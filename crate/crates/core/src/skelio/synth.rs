//! Desk-scale synthetic skeleton data.
//!
//! Every class is a family of joint trajectories: per-joint sinusoids with a
//! class-specific frequency, amplitude pattern and phase pattern, laid over a
//! fixed binary-tree skeleton. Samples vary in phase, speed, amplitude, body
//! scale (by subject) and noise. Each sample is emitted under two fixed camera
//! rotations that share its id and label.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::augment::rotation_xyz;
use super::{write_records, DatasetManifest, Dims, SkeletonSequence, BACKGROUND};
use crate::error::{Error, Result};

/// Camera yaw of each synthetic view, degrees.
pub const VIEW_YAW_DEG: [f64; 2] = [-30.0, 30.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub joints: usize,
    pub persons: usize,
    pub coords: usize,
    pub subjects: usize,
    pub noise_std: f64,
    /// Untrimmed videos per split for detection/segmentation; 0 disables.
    pub untrimmed_videos: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { classes: 4, per_class: 50, frames: 48, joints: 10, persons: 1, coords: 3, subjects: 10, noise_std: 0.01, untrimmed_videos: 0, seed: 0 }
    }
}

/// A generated dataset. `train`/`test` hold two records (views) per sample.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub manifest: DatasetManifest,
    pub train: Vec<SkeletonSequence>,
    pub test: Vec<SkeletonSequence>,
    pub untrimmed_train: Vec<SkeletonSequence>,
    pub untrimmed_test: Vec<SkeletonSequence>,
}

impl SynthData {
    /// Writes `manifest.json` and one JSONL file per split into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut splits = vec![("train", &self.train), ("test", &self.test)];
        if !self.untrimmed_train.is_empty() || !self.untrimmed_test.is_empty() {
            splits.push(("untrimmed_train", &self.untrimmed_train));
            splits.push(("untrimmed_test", &self.untrimmed_test));
        }
        for (name, seqs) in splits {
            write_records(&dir.join(format!("{name}.jsonl")), seqs)?;
        }
        let path = dir.join("manifest.json");
        self.manifest.save(&path)?;
        Ok(path)
    }
}

/// Rotation applied to produce synthetic view `view`.
pub fn view_rotation(view: usize) -> [[f64; 3]; 3] {
    rotation_xyz([0.0, VIEW_YAW_DEG[view % VIEW_YAW_DEG.len()].to_radians(), 0.0])
}

struct ClassFamily {
    freq: f64,
    amp: Vec<[f64; 3]>,
    phase: Vec<[f64; 3]>,
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rest: Vec<[f64; 3]>,
    families: Vec<ClassFamily>,
    body_scale: Vec<f64>,
}

fn parent(j: usize) -> usize {
    (j - 1) / 2
}

fn mirror(j: usize) -> usize {
    if j == 0 {
        return 0;
    }
    let mp = mirror(parent(j));
    if j % 2 == 1 {
        2 * mp + 2
    } else {
        2 * mp + 1
    }
}

fn sub_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    // splitmix-style mixing keeps streams for different tags unrelated
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ a.wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ b.wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SynthSpec) -> Self {
        let v = spec.joints;
        let mut rest = vec![[0.0; 3]; v];
        for j in 1..v {
            let depth = (usize::BITS - (j + 1).leading_zeros() - 1) as f64;
            let side = if j % 2 == 1 { -1.0 } else { 1.0 };
            let p = rest[parent(j)];
            rest[j] = [p[0] + side * 0.15, p[1] - 0.2, p[2] + 0.02 * depth];
        }
        let families = (0..spec.classes)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 1, k as u64, 0));
                let amp = (0..v)
                    .map(|j| {
                        let active = j > 0 && rng.random::<f64>() < 0.5;
                        let hi = if active { 0.25 } else { 0.03 };
                        [rng.random_range(0.0..hi), rng.random_range(0.0..hi), rng.random_range(0.0..hi)]
                    })
                    .collect();
                let phase = (0..v).map(|_| [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)]).collect();
                ClassFamily { freq: 1.0 + 0.75 * k as f64, amp, phase }
            })
            .collect();
        let mut srng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 2, 0, 0));
        let body_scale = (0..spec.subjects.max(2)).map(|_| srng.random_range(0.85..1.15)).collect();
        Self { spec, rest, families, body_scale }
    }

    /// Person-0 joint positions of one class clip over `len` frames.
    fn clip(&self, class: usize, len: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let fam = &self.families[class];
        let psi = rng.random_range(0.0..TAU);
        let speed = rng.random_range(0.85..1.15);
        let amp = rng.random_range(0.8..1.2);
        let noise = Normal::new(0.0, self.spec.noise_std.max(1e-12)).expect("positive std");
        let v = self.spec.joints;
        let mut out = Vec::with_capacity(len * v);
        for t in 0..len {
            let arg = TAU * fam.freq * speed * t as f64 / len as f64 + psi;
            for j in 0..v {
                let mut p = [0.0; 3];
                for a in 0..3 {
                    let n = if self.spec.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                    p[a] = scale * self.rest[j][a] + amp * fam.amp[j][a] * (arg + fam.phase[j][a]).sin() + n;
                }
                out.push(p);
            }
        }
        out
    }

    fn idle(&self, len: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let noise = Normal::new(0.0, self.spec.noise_std.max(1e-12)).expect("positive std");
        let psi = rng.random_range(0.0..TAU);
        let v = self.spec.joints;
        let mut out = Vec::with_capacity(len * v);
        for t in 0..len {
            let breath = 0.005 * (TAU * t as f64 / 40.0 + psi).sin();
            for j in 0..v {
                let mut p = [0.0; 3];
                for a in 0..3 {
                    let n = if self.spec.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                    p[a] = scale * self.rest[j][a] + breath + n;
                }
                out.push(p);
            }
        }
        out
    }

    /// Centers on the frame-0 root, rotates into `view` and lays the
    /// positions out as a sequence with empty extra person slots.
    fn to_sequence(&self, id: String, positions: &[[f64; 3]], view: usize) -> SkeletonSequence {
        let s = self.spec;
        let len = positions.len() / s.joints;
        let dims = Dims { frames: len, persons: s.persons, joints: s.joints, coords: s.coords };
        let mut seq = SkeletonSequence::zeros(id, dims);
        let origin = positions[0];
        let r = view_rotation(view);
        for t in 0..len {
            for j in 0..s.joints {
                let p = positions[t * s.joints + j];
                let c = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
                let out = seq.joint_mut(t, 0, j);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = r[i][0] * c[0] + r[i][1] * c[1] + r[i][2] * c[2];
                }
            }
        }
        seq.view = Some(view as u32);
        seq
    }

    fn subject_pool(&self, test: bool) -> std::ops::Range<usize> {
        let n = self.body_scale.len();
        if test {
            n / 2..n
        } else {
            0..n / 2
        }
    }

    fn trimmed(&self, test: bool) -> Vec<SkeletonSequence> {
        let s = self.spec;
        let split = if test { "test" } else { "train" };
        let mut out = Vec::with_capacity(s.classes * s.per_class * 2);
        for i in 0..s.per_class {
            for k in 0..s.classes {
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(s.seed, 3 + test as u64, k as u64, i as u64));
                let subject = rng.random_range(self.subject_pool(test));
                let pos = self.clip(k, s.frames, self.body_scale[subject], &mut rng);
                for view in 0..VIEW_YAW_DEG.len() {
                    let mut seq = self.to_sequence(format!("{split}-{k}-{i}"), &pos, view);
                    seq.label = Some(k);
                    seq.subject = Some(subject as u32);
                    out.push(seq);
                }
            }
        }
        out
    }

    fn untrimmed(&self, test: bool) -> Vec<SkeletonSequence> {
        let s = self.spec;
        let split = if test { "untrimmed_test" } else { "untrimmed_train" };
        (0..s.untrimmed_videos)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(s.seed, 5 + test as u64, i as u64, 0));
                let subject = rng.random_range(self.subject_pool(test));
                let scale = self.body_scale[subject];
                let mut pos = Vec::new();
                let mut labels = Vec::new();
                let gap = |rng: &mut ChaCha8Rng| rng.random_range(8..=20);
                let g = gap(&mut rng);
                pos.extend(self.idle(g, scale, &mut rng));
                labels.extend(std::iter::repeat_n(BACKGROUND, g));
                for _ in 0..rng.random_range(2..=4) {
                    let k = rng.random_range(0..s.classes);
                    let len = rng.random_range((s.frames / 2).max(2)..=s.frames.max(2));
                    pos.extend(self.clip(k, len, scale, &mut rng));
                    labels.extend(std::iter::repeat_n(k as i64, len));
                    let g = gap(&mut rng);
                    pos.extend(self.idle(g, scale, &mut rng));
                    labels.extend(std::iter::repeat_n(BACKGROUND, g));
                }
                let mut seq = self.to_sequence(format!("{split}-{i}"), &pos, 0);
                seq.subject = Some(subject as u32);
                seq.frame_labels = Some(labels);
                seq
            })
            .collect()
    }

    fn manifest(&self) -> DatasetManifest {
        let v = self.spec.joints;
        let mut splits = BTreeMap::from([("train".to_string(), PathBuf::from("train.jsonl")), ("test".to_string(), PathBuf::from("test.jsonl"))]);
        if self.spec.untrimmed_videos > 0 {
            splits.insert("untrimmed_train".into(), "untrimmed_train.jsonl".into());
            splits.insert("untrimmed_test".into(), "untrimmed_test.jsonl".into());
        }
        DatasetManifest {
            joint_count: v,
            person_slots: self.spec.persons,
            coord_dims: self.spec.coords,
            edges: (1..v).map(|j| [j, parent(j)]).collect(),
            class_names: (0..self.spec.classes).map(|k| format!("class{k}")).collect(),
            splits,
            mirror_pairs: (1..v).filter(|&j| mirror(j) < v && j < mirror(j)).map(|j| [j, mirror(j)]).collect(),
            base_dir: PathBuf::new(),
        }
    }
}

/// Generates a trimmed train/test pair (and optionally untrimmed videos).
/// Train and test use disjoint subjects.
pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthData> {
    if spec.classes < 2 {
        return Err(Error::Config(format!("synthetic data needs at least 2 classes, got {}", spec.classes)));
    }
    if spec.joints == 0 || spec.persons == 0 || spec.frames == 0 || !matches!(spec.coords, 2 | 3) {
        return Err(Error::Config("synthetic data needs positive frames/joints/persons and 2 or 3 coordinates".into()));
    }
    let g = Generator::new(spec);
    Ok(SynthData {
        manifest: g.manifest(),
        train: g.trimmed(false),
        test: g.trimmed(true),
        untrimmed_train: g.untrimmed(false),
        untrimmed_test: g.untrimmed(true),
    })
}

/// Only the untrimmed videos of [`synth_dataset`].
pub fn synth_untrimmed(spec: &SynthSpec) -> Result<(Vec<SkeletonSequence>, Vec<SkeletonSequence>)> {
    let d = synth_dataset(&SynthSpec { per_class: 0, ..spec.clone() })?;
    Ok((d.untrimmed_train, d.untrimmed_test))
}

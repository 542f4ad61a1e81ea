use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::resample::temporal_resample;
use super::SkeletonSequence;
use crate::error::{Error, Result};

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub const fn fixed(v: f64) -> Self {
        Range(v, v)
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }

    fn is(self, v: f64) -> bool {
        self.0 == v && self.1 == v
    }
}

/// Augmentation parameters. A transform whose range collapses to its
/// identity value (0 for angles and shear, 1 for scale and crop) is skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugSpec {
    /// Rotation angle ranges about each axis, degrees.
    pub rotation_x_deg: Range,
    pub rotation_y_deg: Range,
    pub rotation_z_deg: Range,
    /// Range of every off-diagonal shear coefficient.
    pub shear: Range,
    /// Isotropic scale factor.
    pub scale: Range,
    /// Gaussian joint noise, meters.
    pub jitter_std: f64,
    /// Fraction of frames kept by the temporal crop before resizing back.
    pub crop_ratio: Range,
    pub flip_prob: f64,
    /// Left/right joint pairs swapped on flip.
    #[serde(default)]
    pub mirror_pairs: Vec<[usize; 2]>,
    pub seed: u64,
}

impl AugSpec {
    pub fn identity() -> Self {
        Self {
            rotation_x_deg: Range::fixed(0.0),
            rotation_y_deg: Range::fixed(0.0),
            rotation_z_deg: Range::fixed(0.0),
            shear: Range::fixed(0.0),
            scale: Range::fixed(1.0),
            jitter_std: 0.0,
            crop_ratio: Range::fixed(1.0),
            flip_prob: 0.0,
            mirror_pairs: Vec::new(),
            seed: 0,
        }
    }

    /// Defaults used for pretraining.
    pub fn standard() -> Self {
        Self {
            rotation_x_deg: Range(-15.0, 15.0),
            rotation_y_deg: Range(-15.0, 15.0),
            rotation_z_deg: Range(-15.0, 15.0),
            shear: Range(-0.2, 0.2),
            scale: Range(0.9, 1.1),
            jitter_std: 0.01,
            crop_ratio: Range(0.8, 1.0),
            flip_prob: 0.0,
            mirror_pairs: Vec::new(),
            seed: 0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("rotation_x_deg", self.rotation_x_deg),
            ("rotation_y_deg", self.rotation_y_deg),
            ("rotation_z_deg", self.rotation_z_deg),
            ("shear", self.shear),
            ("scale", self.scale),
            ("crop_ratio", self.crop_ratio),
        ];
        for (name, r) in ranges {
            if !(r.0 <= r.1) || !r.0.is_finite() || !r.1.is_finite() {
                return Err(Error::Config(format!("augmentation range {name} = [{}, {}] is not ordered", r.0, r.1)));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        if !(self.jitter_std >= 0.0) {
            return Err(Error::Config("jitter_std must be non-negative".into()));
        }
        if self.crop_ratio.0 <= 0.0 || self.crop_ratio.1 > 1.0 {
            return Err(Error::Config("crop_ratio must lie in (0, 1]".into()));
        }
        if self.scale.0 <= 0.0 {
            return Err(Error::Config("scale must be positive".into()));
        }
        Ok(())
    }
}

/// Applies the augmentations in a fixed order: linear map (rotation, shear,
/// scale), jitter, mirror flip, temporal crop-resize. Deterministic in
/// `spec.seed`; absent (all-zero) person slices are left untouched.
pub fn augment(seq: &SkeletonSequence, spec: &AugSpec) -> SkeletonSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = seq.clone();
    let d = seq.dims();
    let c = d.coords;

    let rot = [spec.rotation_x_deg, spec.rotation_y_deg, spec.rotation_z_deg];
    let linear = if rot.iter().all(|r| r.is(0.0)) && spec.shear.is(0.0) && spec.scale.is(1.0) {
        None
    } else {
        let angles = rot.map(|r| r.sample(&mut rng).to_radians());
        let r = if c == 3 { rotation_xyz(angles) } else { rotation_xyz([0.0, 0.0, angles[2]]) };
        let mut shear = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        if !spec.shear.is(0.0) {
            for (i, row) in shear.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    if i != j {
                        *v = spec.shear.sample(&mut rng);
                    }
                }
            }
        }
        let s = spec.scale.sample(&mut rng);
        let mut a = mat3_mul(&r, &shear);
        a.iter_mut().flatten().for_each(|v| *v *= s);
        Some(a)
    };

    let present: Vec<bool> = (0..d.frames).flat_map(|t| (0..d.persons).map(move |m| (t, m))).map(|(t, m)| !seq.is_absent(t, m)).collect();

    if let Some(a) = linear {
        for t in 0..d.frames {
            for m in 0..d.persons {
                if !present[t * d.persons + m] {
                    continue;
                }
                for v in 0..d.joints {
                    let p = out.joint_mut(t, m, v);
                    let src = [p[0], p[1], if c == 3 { p[2] } else { 0.0 }];
                    for (i, o) in p.iter_mut().enumerate() {
                        *o = (0..c).map(|j| a[i][j] * src[j]).sum();
                    }
                }
            }
        }
    }

    if spec.jitter_std > 0.0 {
        let noise = Normal::new(0.0, spec.jitter_std).expect("validated std");
        for t in 0..d.frames {
            for m in 0..d.persons {
                if !present[t * d.persons + m] {
                    continue;
                }
                for x in out.person_mut(t, m) {
                    *x += noise.sample(&mut rng);
                }
            }
        }
    }

    if spec.flip_prob > 0.0 && rng.random::<f64>() < spec.flip_prob {
        for t in 0..d.frames {
            for m in 0..d.persons {
                if !present[t * d.persons + m] {
                    continue;
                }
                for v in 0..d.joints {
                    out.joint_mut(t, m, v)[0] *= -1.0;
                }
                for &[l, r] in &spec.mirror_pairs {
                    let left = out.joint(t, m, l).to_vec();
                    let right = out.joint(t, m, r).to_vec();
                    out.joint_mut(t, m, l).copy_from_slice(&right);
                    out.joint_mut(t, m, r).copy_from_slice(&left);
                }
            }
        }
    }

    if !spec.crop_ratio.is(1.0) && d.frames > 1 {
        let ratio = spec.crop_ratio.sample(&mut rng);
        let keep = ((ratio * d.frames as f64).round() as usize).clamp(1, d.frames);
        let start = if keep < d.frames { rng.random_range(0..=d.frames - keep) } else { 0 };
        let frame = d.persons * d.joints * c;
        let cropped = out.with_frames(keep, out.data()[start * frame..(start + keep) * frame].to_vec());
        let mut cropped = cropped;
        cropped.frame_labels = out.frame_labels.as_ref().map(|l| l[start..start + keep].to_vec());
        out = temporal_resample(&cropped, d.frames);
    }
    out
}

/// `Rz · Ry · Rx` for angles in radians.
pub(crate) fn rotation_xyz([ax, ay, az]: [f64; 3]) -> [[f64; 3]; 3] {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat3_mul(&rz, &mat3_mul(&ry, &rx))
}

pub(crate) fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skelio::Dims;

    fn sample() -> SkeletonSequence {
        let dims = Dims { frames: 6, persons: 2, joints: 3, coords: 3 };
        let mut data: Vec<f64> = (0..dims.len()).map(|i| ((i * 31) % 17) as f64 * 0.1 - 0.8).collect();
        // person 1 absent throughout
        for t in 0..6 {
            let o = (t * 2 + 1) * 9;
            data[o..o + 9].fill(0.0);
        }
        let mut s = SkeletonSequence::new("a", dims, data).unwrap();
        s.label = Some(2);
        s.view = Some(1);
        s
    }

    #[test]
    fn identity_spec_is_bitwise_identity() {
        let s = sample();
        assert_eq!(augment(&s, &AugSpec::identity()), s);
    }

    #[test]
    fn same_seed_same_output() {
        let s = sample();
        let spec = AugSpec { flip_prob: 0.5, mirror_pairs: vec![[1, 2]], ..AugSpec::standard() }.with_seed(11);
        let a = augment(&s, &spec);
        assert_eq!(a, augment(&s, &spec));
        assert_ne!(a, augment(&s, &spec.with_seed(12)));
        assert_eq!((a.label, a.view, a.id.as_str()), (Some(2), Some(1), "a"));
        for t in 0..6 {
            assert!(a.is_absent(t, 1), "absent slot must stay zero");
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let s = SkeletonSequence::new("p", Dims { frames: 1, persons: 1, joints: 1, coords: 3 }, vec![1.0, 0.0, 0.0]).unwrap();
        let spec = AugSpec { rotation_z_deg: Range::fixed(90.0), ..AugSpec::identity() };
        let r = augment(&s, &spec);
        let want = [0.0, 1.0, 0.0];
        for (a, b) in r.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{:?}", r.data());
        }
    }

    #[test]
    fn flip_mirrors_and_swaps() {
        let s = SkeletonSequence::new("f", Dims { frames: 1, persons: 1, joints: 2, coords: 3 }, vec![1.0, 2.0, 3.0, -4.0, 5.0, 6.0]).unwrap();
        let spec = AugSpec { flip_prob: 1.0, mirror_pairs: vec![[0, 1]], ..AugSpec::identity() };
        assert_eq!(augment(&s, &spec).data(), &[4.0, 5.0, 6.0, -1.0, 2.0, 3.0]);
    }

    #[test]
    fn validation() {
        assert!(AugSpec::standard().validate().is_ok());
        assert!(AugSpec { scale: Range(1.2, 0.8), ..AugSpec::identity() }.validate().is_err());
        assert!(AugSpec { flip_prob: 1.5, ..AugSpec::identity() }.validate().is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::SkeletonSequence;

/// Input modality derived from joint coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Joint,
    Bone,
    Motion,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Joint, Modality::Bone, Modality::Motion];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Joint => "joint",
            Modality::Bone => "bone",
            Modality::Motion => "motion",
        }
    }

    pub fn derive(self, seq: &SkeletonSequence, edges: &[[usize; 2]]) -> SkeletonSequence {
        match self {
            Modality::Joint => seq.clone(),
            Modality::Bone => derive_bone(seq, edges),
            Modality::Motion => derive_motion(seq),
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

/// `bone[child] = joint[child] - joint[parent]`; the root bone is zero.
pub fn derive_bone(seq: &SkeletonSequence, edges: &[[usize; 2]]) -> SkeletonSequence {
    let d = seq.dims();
    let mut out = seq.with_frames(d.frames, vec![0.0; d.len()]);
    for t in 0..d.frames {
        for m in 0..d.persons {
            for &[child, parent] in edges {
                let (c, p) = (seq.joint(t, m, child), seq.joint(t, m, parent));
                for ((o, a), b) in out.joint_mut(t, m, child).iter_mut().zip(c).zip(p) {
                    *o = a - b;
                }
            }
        }
    }
    out
}

/// Forward temporal difference; the last frame is zero.
pub fn derive_motion(seq: &SkeletonSequence) -> SkeletonSequence {
    let d = seq.dims();
    let mut data = vec![0.0; d.len()];
    let frame = d.persons * d.joints * d.coords;
    for t in 0..d.frames.saturating_sub(1) {
        let (now, next) = (seq.frame(t), seq.frame(t + 1));
        for (o, (a, b)) in data[t * frame..(t + 1) * frame].iter_mut().zip(now.iter().zip(next)) {
            *o = b - a;
        }
    }
    seq.with_frames(d.frames, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skelio::Dims;
    use proptest::prelude::*;

    fn seq(dims: Dims, data: Vec<f64>) -> SkeletonSequence {
        SkeletonSequence::new("s", dims, data).unwrap()
    }

    #[test]
    fn two_joint_chain() {
        let s = seq(Dims { frames: 1, persons: 1, joints: 2, coords: 3 }, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = derive_bone(&s, &[[1, 0]]);
        assert_eq!(b.joint(0, 0, 0), &[0.0, 0.0, 0.0]);
        assert_eq!(b.joint(0, 0, 1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn absent_person_gives_zero_bones() {
        let dims = Dims { frames: 2, persons: 2, joints: 3, coords: 3 };
        let mut data: Vec<f64> = (0..dims.len()).map(|i| i as f64 * 0.1 + 1.0).collect();
        for t in 0..2 {
            let o = (t * 2 + 1) * 9;
            data[o..o + 9].fill(0.0);
        }
        let b = derive_bone(&seq(dims, data), &[[1, 0], [2, 1]]);
        assert!(b.is_absent(0, 1) && b.is_absent(1, 1));
    }

    #[test]
    fn motion_cases() {
        let dims = Dims { frames: 3, persons: 1, joints: 1, coords: 3 };
        let still = derive_motion(&seq(dims, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0]));
        assert!(still.data().iter().all(|&v| v == 0.0));

        let single = derive_motion(&seq(Dims { frames: 1, ..dims }, vec![4.0, 5.0, 6.0]));
        assert_eq!(single.data(), &[0.0, 0.0, 0.0]);

        // x(t) = t: finite difference is 1 except the zero-padded last frame
        let drift = derive_motion(&seq(dims, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0]));
        assert_eq!(drift.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    /// Random 5-joint tree against a direct per-edge subtraction.
    #[test]
    fn bone_matches_per_edge_oracle() {
        let edges = [[1, 0], [2, 0], [3, 1], [4, 3]];
        let dims = Dims { frames: 4, persons: 2, joints: 5, coords: 3 };
        let data: Vec<f64> = (0..dims.len()).map(|i| ((i * 7919) % 113) as f64 / 17.0 - 3.0).collect();
        let s = seq(dims, data.clone());
        let b = derive_bone(&s, &edges);
        let at = |t: usize, m: usize, v: usize, c: usize| data[((t * 2 + m) * 5 + v) * 3 + c];
        for t in 0..4 {
            for m in 0..2 {
                for c in 0..3 {
                    assert_eq!(b.joint(t, m, 0)[c], 0.0);
                    for [child, parent] in edges {
                        assert_eq!(b.joint(t, m, child)[c], at(t, m, child, c) - at(t, m, parent, c));
                    }
                }
            }
        }
    }

    proptest! {
        /// Summing bones along the root path telescopes to joint - root.
        #[test]
        fn bones_telescope(data in proptest::collection::vec(-2.0f64..2.0, 3 * 6 * 3)) {
            let edges = [[1, 0], [2, 1], [3, 1], [4, 0], [5, 4]];
            let parent = [None, Some(0), Some(1), Some(1), Some(0), Some(4)];
            let dims = Dims { frames: 3, persons: 1, joints: 6, coords: 3 };
            let s = seq(dims, data);
            let b = derive_bone(&s, &edges);
            for t in 0..3 {
                for node in 0..6 {
                    let mut acc = [0.0; 3];
                    let mut cur = node;
                    while let Some(p) = parent[cur] {
                        for c in 0..3 { acc[c] += b.joint(t, 0, cur)[c]; }
                        cur = p;
                    }
                    for c in 0..3 {
                        let want = s.joint(t, 0, node)[c] - s.joint(t, 0, 0)[c];
                        prop_assert!((acc[c] - want).abs() < 1e-12);
                    }
                }
            }
        }

        /// Motion of the reversed sequence is the negated, reversed, shifted motion.
        #[test]
        fn motion_reversal(data in proptest::collection::vec(-2.0f64..2.0, 5 * 2 * 3)) {
            let dims = Dims { frames: 5, persons: 1, joints: 2, coords: 3 };
            let s = seq(dims, data.clone());
            let frame = 6;
            let rev: Vec<f64> = (0..5).rev().flat_map(|t| data[t * frame..(t + 1) * frame].to_vec()).collect();
            let m = derive_motion(&s);
            let mr = derive_motion(&seq(dims, rev));
            // reversed motion at t equals -motion at T-2-t for t < T-1
            for t in 0..4 {
                for k in 0..frame {
                    prop_assert_eq!(mr.frame(t)[k], -m.frame(3 - t)[k]);
                }
            }
        }
    }
}

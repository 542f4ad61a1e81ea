use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset description: skeleton topology, class names and split files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub joint_count: usize,
    pub person_slots: usize,
    pub coord_dims: usize,
    /// `[child, parent]` pairs forming a tree over the joints.
    pub edges: Vec<[usize; 2]>,
    pub class_names: Vec<String>,
    /// Split name to JSONL path, relative to the manifest's directory.
    pub splits: BTreeMap<String, PathBuf>,
    /// Left/right joint pairs swapped by mirror augmentation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mirror_pairs: Vec<[usize; 2]>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Resolved path of a split file.
    pub fn split_path(&self, split: &str) -> Result<PathBuf> {
        let rel = self
            .splits
            .get(split)
            .ok_or_else(|| Error::Manifest(format!("no split named {split:?}; available: {:?}", self.splits.keys().collect::<Vec<_>>())))?;
        Ok(if rel.is_absolute() { rel.clone() } else { self.base_dir.join(rel) })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Checks that the edges form a spanning tree and the other fields are sane.
    pub fn validate(&self) -> Result<()> {
        let v = self.joint_count;
        if v == 0 || self.person_slots == 0 {
            return Err(Error::Manifest("joint_count and person_slots must be positive".into()));
        }
        if !matches!(self.coord_dims, 2 | 3) {
            return Err(Error::Manifest(format!("coord_dims must be 2 or 3, got {}", self.coord_dims)));
        }
        if self.edges.len() != v - 1 {
            return Err(Error::Manifest(format!("a tree over {v} joints needs {} edges, found {}", v - 1, self.edges.len())));
        }
        let mut parent = vec![None; v];
        for &[child, par] in &self.edges {
            if child >= v || par >= v || child == par {
                return Err(Error::Manifest(format!("invalid edge [{child}, {par}]")));
            }
            if parent[child].replace(par).is_some() {
                return Err(Error::Manifest(format!("joint {child} has two parents")));
            }
        }
        let root = self.root()?;
        // every joint must reach the root without revisiting a joint
        for start in 0..v {
            let mut cur = start;
            let mut steps = 0;
            while cur != root {
                cur = parent[cur].ok_or_else(|| Error::Manifest(format!("joint {cur} is disconnected")))?;
                steps += 1;
                if steps > v {
                    return Err(Error::Manifest("edges contain a cycle".into()));
                }
            }
        }
        for &[a, b] in &self.mirror_pairs {
            if a >= v || b >= v {
                return Err(Error::Manifest(format!("mirror pair [{a}, {b}] out of range")));
            }
        }
        Ok(())
    }

    /// The unique joint that is never a child.
    pub fn root(&self) -> Result<usize> {
        let mut is_child = vec![false; self.joint_count];
        for &[c, _] in &self.edges {
            if c < self.joint_count {
                is_child[c] = true;
            }
        }
        let roots: Vec<usize> = (0..self.joint_count).filter(|&j| !is_child[j]).collect();
        match roots.as_slice() {
            [r] => Ok(*r),
            _ => Err(Error::Manifest(format!("expected exactly one root joint, found {roots:?}"))),
        }
    }

    /// The 25-joint NTU RGB+D topology.
    pub fn ntu25() -> Self {
        const PAIRS: [(usize, usize); 24] = [
            (1, 2),
            (2, 21),
            (3, 21),
            (4, 3),
            (5, 21),
            (6, 5),
            (7, 6),
            (8, 7),
            (9, 21),
            (10, 9),
            (11, 10),
            (12, 11),
            (13, 1),
            (14, 13),
            (15, 14),
            (16, 15),
            (17, 1),
            (18, 17),
            (19, 18),
            (20, 19),
            (22, 23),
            (23, 8),
            (24, 25),
            (25, 12),
        ];
        const MIRROR: [(usize, usize); 10] = [(5, 9), (6, 10), (7, 11), (8, 12), (13, 17), (14, 18), (15, 19), (16, 20), (22, 24), (23, 25)];
        Self {
            joint_count: 25,
            person_slots: 2,
            coord_dims: 3,
            edges: PAIRS.iter().map(|&(c, p)| [c - 1, p - 1]).collect(),
            class_names: (0..60).map(|i| format!("A{:03}", i + 1)).collect(),
            splits: BTreeMap::new(),
            mirror_pairs: MIRROR.iter().map(|&(a, b)| [a - 1, b - 1]).collect(),
            base_dir: PathBuf::new(),
        }
    }
}

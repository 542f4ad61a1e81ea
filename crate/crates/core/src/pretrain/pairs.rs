use std::collections::BTreeMap;

use rand::Rng;

use super::config::Pairing;
use crate::dste::StreamFeatures;
use crate::error::{Error, Result};
use crate::seed;
use crate::skelio::{augment, AugSpec, Modality, SkeletonSequence};

/// All records (views) that share one sample id, in input order.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub views: Vec<SkeletonSequence>,
}

/// Groups records by id, keeping first-appearance order of ids.
pub fn group_by_id(records: Vec<SkeletonSequence>) -> Vec<Sample> {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut out: Vec<Sample> = Vec::new();
    for r in records {
        match index.get(&r.id) {
            Some(&i) => out[i].views.push(r),
            None => {
                index.insert(r.id.clone(), out.len());
                out.push(Sample { id: r.id.clone(), views: vec![r] });
            }
        }
    }
    out
}

/// Builds `k` row-aligned copies of `batch`: copy `a`, row `i` is always a
/// version of sample `i`. `key` is the position of this batch in the run; the
/// view choice and augmentation of every cell derive from `(seed, key, i, a)`.
pub fn make_pairs(batch: &[&Sample], strategy: Pairing, aug: &AugSpec, k: usize, key: u64) -> Result<Vec<Vec<SkeletonSequence>>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 copies, got {k}")));
    }
    let mut copies: Vec<Vec<SkeletonSequence>> = (0..k).map(|_| Vec::with_capacity(batch.len())).collect();
    for (i, s) in batch.iter().enumerate() {
        let n = s.views.len();
        if n == 0 {
            return Err(Error::Record { id: s.id.clone(), message: "sample has no records".into() });
        }
        if strategy == Pairing::MultiView && n < 2 {
            return Err(Error::Record { id: s.id.clone(), message: "multi-view pairing needs at least 2 views of this sample".into() });
        }
        let offset = seed::rng(aug.seed, &[key, i as u64]).random_range(0..n);
        for (a, copy) in copies.iter_mut().enumerate() {
            let view = match strategy {
                Pairing::AugmentOnly => offset,
                // distinct views while they last, then cycle
                Pairing::MultiView => (offset + a) % n,
            };
            let spec = aug.with_seed(seed::derive(aug.seed, &[key, i as u64, a as u64 + 1]));
            copy.push(augment(&s.views[view], &spec));
        }
    }
    Ok(copies)
}

/// Elementwise mean of per-modality features, per stream. Summation runs in
/// modality order and the sum is scaled once, matching the encoder.
pub fn fuse_modalities(features: &BTreeMap<Modality, StreamFeatures>) -> Result<StreamFeatures> {
    let mut it = features.values();
    let first = it.next().ok_or_else(|| Error::Config("no modalities to fuse".into()))?;
    if features.len() == 1 {
        return Ok(first.clone());
    }
    let mut acc = first.clone();
    for f in it {
        if f.temporal.shape() != acc.temporal.shape() || f.spatial.shape() != acc.spatial.shape() {
            return Err(Error::Shape("modality features differ in shape".into()));
        }
        acc.temporal.add_assign(&f.temporal);
        acc.spatial.add_assign(&f.spatial);
    }
    let inv = 1.0 / features.len() as f64;
    Ok(StreamFeatures { temporal: acc.temporal.scale(inv), spatial: acc.spatial.scale(inv) })
}

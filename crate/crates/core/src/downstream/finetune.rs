use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, softmax_in_place};
use crate::autograd::Tape;
use crate::dste::ModalInputs;
use crate::error::{Error, Result};
use crate::parallel::{self, Exec};
use crate::params::{Grads, Init, ParamId, ParamStore};
use crate::pretrain::{Adam, Model};
use crate::seed;
use crate::skelio::SkeletonSequence;
use crate::tensor::Mat;

const SUBSET_STREAM: u64 = 11;
const SHUFFLE_STREAM: u64 = 12;
const HEAD_STREAM: u64 = 13;

/// End-to-end fine-tuning of encoder and a linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Drives subset sampling, head initialization and shuffling.
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 10, lr: 1e-3, batch_size: 32, weight_decay: 0.0, seed: 0 }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("finetune epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("finetune lr must be positive and weight_decay nonnegative".into()));
        }
        Ok(())
    }
}

/// Chosen units of a stratified sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Subset {
    /// Selected positions, in input order.
    pub indices: Vec<usize>,
    /// Classes that got no sample at this fraction.
    pub dropped_classes: Vec<usize>,
}

/// Takes `round(fraction · n_c)` items of every class `c`, chosen by a
/// seeded shuffle within the class.
pub fn stratified_subset(labels: &[usize], fraction: f64, seed: u64) -> Result<Subset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("labeled fraction must lie in (0, 1], got {fraction}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut indices = Vec::new();
    let mut dropped_classes = Vec::new();
    for (&c, members) in &by_class {
        let take = (fraction * members.len() as f64).round() as usize;
        if take == 0 {
            dropped_classes.push(c);
            continue;
        }
        let mut m = members.clone();
        if take < m.len() {
            m.shuffle(&mut seed::rng(seed, &[SUBSET_STREAM, c as u64]));
        }
        indices.extend_from_slice(&m[..take]);
    }
    indices.sort_unstable();
    Ok(Subset { indices, dropped_classes })
}

/// Outcome of fine-tuning.
#[derive(Clone, Debug, Serialize)]
pub struct FinetuneResult {
    /// Test top-1 accuracy in `[0, 1]`.
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Training records used.
    pub train_records: usize,
    pub subset: Subset,
}

struct Head {
    w: ParamId,
    b: ParamId,
}

fn logits_of(tape: &mut Tape, model: &Model, head: &Head, inputs: &ModalInputs) -> Result<crate::autograd::Var> {
    let h = model.encoder.forward(tape, inputs)?.h;
    let (w, b) = (tape.param(head.w), tape.param(head.b));
    Ok(tape.linear(h, w, b))
}

fn labels_of(seqs: &[SkeletonSequence]) -> Result<Vec<usize>> {
    seqs.iter().map(|s| s.label.ok_or_else(|| Error::Record { id: s.id.clone(), message: "fine-tuning needs a label".into() })).collect()
}

/// Fine-tunes on all of `train`.
pub fn finetune(
    model: &Model,
    store: &ParamStore,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    cfg: &FinetuneConfig,
    exec: Exec,
) -> Result<FinetuneResult> {
    finetune_semi(model, store, train, test, 1.0, cfg, exec)
}

/// Fine-tunes encoder and a fresh linear head on a stratified `fraction` of
/// the training samples. Records sharing an id (views of one sample) are
/// kept or dropped together. The input store is left untouched.
pub fn finetune_semi(
    model: &Model,
    store: &ParamStore,
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
    fraction: f64,
    cfg: &FinetuneConfig,
    exec: Exec,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    let train_labels = labels_of(train)?;
    let test_labels = labels_of(test)?;
    for s in train.iter().chain(test) {
        model.check_record(s)?;
    }

    let mut ids: Vec<&str> = Vec::new();
    let mut id_labels = Vec::new();
    let mut seen = BTreeSet::new();
    for (s, &l) in train.iter().zip(&train_labels) {
        if seen.insert(s.id.as_str()) {
            ids.push(&s.id);
            id_labels.push(l);
        }
    }
    let subset = stratified_subset(&id_labels, fraction, cfg.seed)?;
    let chosen: BTreeSet<&str> = subset.indices.iter().map(|&i| ids[i]).collect();
    let picked: Vec<usize> = (0..train.len()).filter(|&i| chosen.contains(train[i].id.as_str())).collect();
    if picked.len() < 2 {
        return Err(Error::Eval(format!("labeled fraction {fraction} leaves {} training records", picked.len())));
    }
    let classes = train_labels.iter().chain(&test_labels).max().map_or(0, |m| m + 1);

    let mut store = store.clone();
    let dim = model.encoder.embedding_dim();
    let mut rng = seed::rng(cfg.seed, &[HEAD_STREAM]);
    let head = Head {
        w: store.declare("head/w", dim, classes, Init::FanIn(dim), &mut rng),
        b: store.declare("head/b", 1, classes, Init::FanIn(dim), &mut rng),
    };
    let inputs: Vec<ModalInputs> = parallel::map(exec, &picked, |&i| model.prepare(&train[i]));
    let mut opt = Adam::new(&store, cfg.weight_decay);
    let mut order: Vec<usize> = (0..picked.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::rng(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let parts: Vec<Result<Grads>> = parallel::map(exec, batch, |&k| {
                let mut tape = Tape::new(&store);
                let logits = logits_of(&mut tape, model, &head, &inputs[k])?;
                let mut d = tape.value(logits).row(0).to_vec();
                softmax_in_place(&mut d);
                d[train_labels[picked[k]]] -= 1.0;
                d.iter_mut().for_each(|v| *v *= scale);
                Ok(tape.backward(&[(logits, Mat::row_vector(&d))]).params)
            });
            let mut grads = Grads::new(&store);
            for g in parts {
                grads.merge(&g?);
            }
            if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                return Err(Error::NonFinite(format!("fine-tuning gradient of {}", store.name(id))));
            }
            opt.step(&mut store, &grads, cfg.lr);
        }
    }

    let predictions: Vec<usize> = parallel::map(exec, test, |s| {
        let mut tape = Tape::new(&store);
        let logits = logits_of(&mut tape, model, &head, &model.prepare(s))?;
        Ok(argmax(tape.value(logits).row(0)))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let correct = predictions.iter().zip(&test_labels).filter(|(p, l)| p == l).count();
    Ok(FinetuneResult { accuracy: correct as f64 / test.len().max(1) as f64, predictions, train_records: picked.len(), subset })
}

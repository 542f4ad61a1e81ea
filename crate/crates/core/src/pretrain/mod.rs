//! Self-supervised pretraining: positive-copy construction, the training
//! step, the epoch loop with logging and checkpoints, and a
//! finite-difference gradient check.

mod adam;
mod config;
mod gradcheck;
mod pairs;

pub use adam::Adam;
pub use config::{DataConfig, Pairing, PretrainConfig, TrainConfig};
pub use gradcheck::{central_difference, finite_diff_check, ArrayCheck, GradCheckReport};
pub use pairs::{fuse_modalities, group_by_id, make_pairs, Sample};

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::checkpoint::{Checkpoint, RngState};
use crate::dste::{Encoder, ModalInputs};
use crate::error::{Error, Result};
use crate::mgfd::{total_grad, BnMode, LossBreakdown, LossWeights, ProjectionSet, ProjectorStats, Projectors};
use crate::parallel::{self, Exec};
use crate::params::{Grads, ParamStore};
use crate::seed;
use crate::skelio::SkeletonSequence;
use crate::tensor::Mat;

/// Stream tags for [`seed::derive`].
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const AUG_STREAM: u64 = 3;

/// What a checkpoint records about the model besides its arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedConfig {
    pub pretrain: PretrainConfig,
    /// Skeleton edges `(child, parent)` of the training data, for the bone
    /// modality.
    pub edges: Vec<[usize; 2]>,
}

/// Encoder, projector heads and the skeleton they were built for.
#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: Encoder,
    pub projectors: Projectors,
    pub edges: Vec<[usize; 2]>,
}

impl Model {
    /// Declares a freshly initialized model, seeded by `cfg.train.seed`.
    pub fn new(cfg: &PretrainConfig, edges: &[[usize; 2]]) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seed::rng(cfg.train.seed, &[INIT_STREAM]);
        let encoder = Encoder::declare(cfg.encoder.clone(), &mut store, &mut rng)?;
        let projectors = Projectors::declare(&mut store, cfg.encoder.repr_dim, cfg.train.proj_dim, &mut rng);
        Ok((Self { encoder, projectors, edges: edges.to_vec() }, store))
    }

    /// Rebuilds the model stored in a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(SavedConfig, Self, ParamStore)> {
        let saved: SavedConfig = serde_json::from_value(ckpt.config.clone())?;
        let (model, mut store) = Self::new(&saved.pretrain, &saved.edges)?;
        let params: std::collections::BTreeMap<String, Mat> =
            ckpt.arrays.iter().filter(|(k, _)| !k.starts_with("opt/")).map(|(k, v)| (k.clone(), v.clone())).collect();
        store.load_from(&params)?;
        Ok((saved, model, store))
    }

    /// Resamples `seq` to the model length and derives every modality.
    pub fn prepare(&self, seq: &SkeletonSequence) -> ModalInputs {
        ModalInputs::prepare(seq, self.encoder.config(), &self.edges)
    }

    /// Instance embedding of one sequence (no augmentation).
    pub fn embed(&self, store: &ParamStore, seq: &SkeletonSequence) -> Result<Vec<f64>> {
        self.encoder.embed_instance(store, &self.prepare(seq))
    }

    /// Instance embeddings of many sequences, in input order.
    pub fn embed_all(&self, store: &ParamStore, seqs: &[SkeletonSequence], exec: Exec) -> Result<Vec<Vec<f64>>> {
        parallel::map(exec, seqs, |s| self.embed(store, s)).into_iter().collect()
    }

    /// Checks that a record fits the encoder's skeleton.
    pub fn check_record(&self, seq: &SkeletonSequence) -> Result<()> {
        let (d, c) = (seq.dims(), self.encoder.config());
        if (d.persons, d.joints, d.coords) != (c.persons, c.joints, c.coords) {
            return Err(Error::Config(format!(
                "record {} has (M, V, C) = ({}, {}, {}) but the encoder expects ({}, {}, {})",
                seq.id, d.persons, d.joints, d.coords, c.persons, c.joints, c.coords
            )));
        }
        Ok(())
    }
}

/// Loss, gradients and batch-norm statistics of one batch.
pub struct BatchEval {
    pub loss: LossBreakdown,
    pub grads: Grads,
    pub stats: ProjectorStats,
}

/// Forward and backward pass over `K` aligned copies of a batch.
///
/// Encoder passes run per sample (in parallel under [`Exec::Parallel`]); the
/// projectors and the loss see each copy's stacked embeddings. Encoder tapes
/// are rebuilt for the backward pass instead of being kept alive, which
/// bounds memory to one tape per worker. Gradients are reduced in a fixed
/// order, so both execution modes give identical numbers.
pub fn batch_loss(model: &Model, store: &ParamStore, copies: &[Vec<ModalInputs>], weights: &LossWeights, exec: Exec) -> Result<BatchEval> {
    let k = copies.len();
    let n = copies.first().map_or(0, Vec::len);
    if copies.iter().any(|c| c.len() != n) {
        return Err(Error::Shape("batch copies differ in length".into()));
    }
    let cells: Vec<(usize, usize)> = (0..k).flat_map(|a| (0..n).map(move |i| (a, i))).collect();
    let embeds: Vec<Vec<f64>> =
        parallel::map(exec, &cells, |&(a, i)| model.encoder.embed_instance(store, &copies[a][i])).into_iter().collect::<Result<_>>()?;
    let width = model.encoder.embedding_dim();

    let mut tape = Tape::new(store);
    let mut leaves = Vec::with_capacity(k);
    let mut vars = Vec::with_capacity(k);
    let mut stats = ProjectorStats::default();
    let mut sets = Vec::with_capacity(k);
    for a in 0..k {
        let h = Mat::from_vec(n, width, embeds[a * n..(a + 1) * n].concat());
        let hv = tape.leaf(h);
        let (p, s) = model.projectors.forward(&mut tape, hv, BnMode::Train)?;
        stats.extend(s);
        sets.push(ProjectionSet { z_t: tape.value(p.z_t).clone(), z_s: tape.value(p.z_s).clone(), z: tape.value(p.z).clone() });
        leaves.push(hv);
        vars.push(p);
    }
    let (loss, zgrads) = total_grad(&sets, weights, true)?;
    if let Some(term) = loss.first_non_finite() {
        return Err(Error::NonFinite(format!("loss term {term}")));
    }
    let mut seeds = Vec::with_capacity(3 * k);
    for (p, g) in vars.iter().zip(zgrads) {
        seeds.push((p.z_t, g.z_t));
        seeds.push((p.z_s, g.z_s));
        seeds.push((p.z, g.z));
    }
    let back = tape.backward(&seeds);
    let dh: Vec<Mat> = leaves.iter().map(|&l| back.wrt(l).cloned().unwrap_or_else(|| Mat::zeros(n, width))).collect();
    let mut grads = back.params;

    let per_sample: Vec<Result<Grads>> = parallel::map(exec, &cells, |&(a, i)| {
        let mut tape = Tape::new(store);
        let out = model.encoder.forward(&mut tape, &copies[a][i])?;
        Ok(tape.backward(&[(out.h, Mat::row_vector(dh[a].row(i)))]).params)
    });
    for g in per_sample {
        grads.merge(&g?);
    }
    if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
    }
    Ok(BatchEval { loss, grads, stats })
}

/// One logged optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub lr: f64,
}

/// Training state: configuration, model, parameters, optimizer and progress.
pub struct Trainer {
    pub cfg: PretrainConfig,
    pub model: Model,
    pub store: ParamStore,
    pub opt: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: u64,
    pub exec: Exec,
    samples: Vec<Sample>,
}

impl Trainer {
    /// Fresh trainer over `records` (every view of every sample).
    pub fn new(cfg: PretrainConfig, edges: &[[usize; 2]], records: Vec<SkeletonSequence>) -> Result<Self> {
        let (model, store) = Model::new(&cfg, edges)?;
        let opt = Adam::new(&store, cfg.train.weight_decay);
        Self::assemble(cfg, model, store, opt, 0, 0, records)
    }

    /// Continues the run saved in `ckpt`. `cfg` must equal the saved
    /// configuration except for the epoch count and output paths.
    pub fn resume(ckpt: &Checkpoint, cfg: Option<PretrainConfig>, records: Vec<SkeletonSequence>) -> Result<Self> {
        let (saved, model, store) = Model::from_checkpoint(ckpt)?;
        let cfg = match cfg {
            None => saved.pretrain,
            Some(c) => {
                let strip = |c: &PretrainConfig| {
                    let mut c = c.clone();
                    c.train.epochs = 0;
                    c.train.decay_epoch = 0;
                    c.train.checkpoint = None;
                    c.train.log = None;
                    c.train.checkpoint_every = 0;
                    c
                };
                if strip(&c) != strip(&saved.pretrain) || c.train.decay_epoch != saved.pretrain.train.decay_epoch {
                    return Err(Error::Config("resume configuration differs from the checkpoint beyond epochs and output paths".into()));
                }
                c
            }
        };
        let mut opt = Adam::new(&store, cfg.train.weight_decay);
        opt.load_arrays(&store, &ckpt.arrays, ckpt.rng.step)?;
        Self::assemble(cfg, model, store, opt, ckpt.epoch, ckpt.rng.step, records)
    }

    fn assemble(
        cfg: PretrainConfig,
        model: Model,
        store: ParamStore,
        opt: Adam,
        epoch: usize,
        step: u64,
        records: Vec<SkeletonSequence>,
    ) -> Result<Self> {
        cfg.validate()?;
        for r in &records {
            model.check_record(r)?;
        }
        let samples = group_by_id(records);
        if samples.len() < 2 {
            return Err(Error::Config(format!("pretraining needs at least 2 samples, got {}", samples.len())));
        }
        Ok(Self { cfg, model, store, opt, epoch, step, exec: Exec::available(), samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Shuffled sample indices of `epoch`, cut into batches. A trailing
    /// batch with fewer than 2 samples is dropped.
    pub fn batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut seed::rng(self.cfg.train.seed, &[SHUFFLE_STREAM, epoch as u64]));
        order.chunks(self.cfg.train.batch_size).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
    }

    /// Aligned, prepared copies of the given samples for step `step`.
    pub fn copies(&self, batch: &[usize], step: u64) -> Result<Vec<Vec<ModalInputs>>> {
        let t = &self.cfg.train;
        let aug = self.cfg.data.aug.with_seed(seed::derive(t.seed, &[AUG_STREAM, self.cfg.data.aug.seed]));
        let picked: Vec<&Sample> = batch.iter().map(|&i| &self.samples[i]).collect();
        let raw = make_pairs(&picked, t.pairing, &aug, t.copies, step)?;
        Ok(raw.iter().map(|c| parallel::map(self.exec, c, |s| self.model.prepare(s))).collect())
    }

    /// Forward, backward and one Adam update on `batch`.
    pub fn train_step(&mut self, batch: &[usize], lr: f64) -> Result<StepLog> {
        let copies = self.copies(batch, self.step)?;
        let eval = batch_loss(&self.model, &self.store, &copies, &self.cfg.loss, self.exec)?;
        self.opt.step(&mut self.store, &eval.grads, lr);
        eval.stats.apply(&mut self.store, self.cfg.train.bn_momentum);
        let log = StepLog { step: self.step, loss: eval.loss, lr };
        self.step += 1;
        Ok(log)
    }

    /// Runs the next epoch, passing every step to `on_step`.
    pub fn run_epoch(&mut self, on_step: &mut dyn FnMut(&StepLog) -> Result<()>) -> Result<()> {
        let lr = self.cfg.lr_at(self.epoch);
        for batch in self.batches(self.epoch) {
            let log = self.train_step(&batch, lr)?;
            on_step(&log)?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// Trains until `cfg.train.epochs`, appending to the JSONL log and
    /// writing checkpoints when configured. Returns this call's step logs.
    pub fn fit(&mut self) -> Result<Vec<StepLog>> {
        let mut writer = match &self.cfg.train.log {
            Some(p) => Some(open_log(p, self.step > 0)?),
            None => None,
        };
        let log_path = self.cfg.train.log.clone();
        let mut logs = Vec::new();
        while self.epoch < self.cfg.train.epochs {
            self.run_epoch(&mut |l: &StepLog| {
                if let (Some(w), Some(p)) = (writer.as_mut(), log_path.as_ref()) {
                    serde_json::to_writer(&mut *w, l)?;
                    w.write_all(b"\n").map_err(|e| Error::io(p, e))?;
                }
                logs.push(l.clone());
                Ok(())
            })?;
            let every = self.cfg.train.checkpoint_every;
            if every > 0 && self.epoch.is_multiple_of(every) && self.epoch < self.cfg.train.epochs {
                self.save_checkpoint()?;
            }
        }
        if let (Some(w), Some(p)) = (writer.as_mut(), log_path.as_ref()) {
            w.flush().map_err(|e| Error::io(p, e))?;
        }
        self.save_checkpoint()?;
        Ok(logs)
    }

    fn save_checkpoint(&self) -> Result<()> {
        if let Some(p) = &self.cfg.train.checkpoint {
            self.checkpoint()?.save(p)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut arrays = self.store.to_map();
        arrays.extend(self.opt.to_arrays(&self.store));
        let config = serde_json::to_value(SavedConfig { pretrain: self.cfg.clone(), edges: self.model.edges.clone() })?;
        Ok(Checkpoint { config, arrays, epoch: self.epoch, rng: RngState { seed: self.cfg.train.seed, step: self.step } })
    }
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let f = if append { OpenOptions::new().create(true).append(true).open(path) } else { File::create(path) };
    f.map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Builds a trainer and runs it to completion.
pub fn fit(cfg: PretrainConfig, edges: &[[usize; 2]], records: Vec<SkeletonSequence>) -> Result<(Trainer, Vec<StepLog>)> {
    let mut t = Trainer::new(cfg, edges, records)?;
    let logs = t.fit()?;
    Ok((t, logs))
}

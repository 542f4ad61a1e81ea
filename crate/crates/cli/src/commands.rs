use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use usdrl::checkpoint::Checkpoint;
use usdrl::parallel::Exec;
use usdrl::params::ParamStore;
use usdrl::pretrain::{finite_diff_check, Model, PretrainConfig, SavedConfig, Trainer};
use usdrl::skelio::{load_split, synth_dataset, DatasetManifest, SkeletonSequence, SynthSpec};

use crate::report::{FileLock, RunReport};
use crate::{config, Ctx, ExportArgs, GradcheckArgs, PretrainArgs, SynthArgs};

pub fn finish(ctx: &Ctx, mut report: RunReport) -> Result<PathBuf> {
    report.wall_time_s = ctx.started.elapsed().as_secs_f64();
    report.write(&ctx.out_dir)
}

pub fn load_model(path: &Path) -> Result<(SavedConfig, Model, ParamStore)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(Model::from_checkpoint(&ckpt)?)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading dataset manifest {}", path.display()))
}

/// Manifest from the flag, the configuration, or the checkpoint's own run.
pub fn eval_manifest(flag: Option<&PathBuf>, ctx: &Ctx, saved: &SavedConfig) -> Result<DatasetManifest> {
    let path = config::manifest_path(flag, &ctx.cfg)
        .or_else(|e| saved.pretrain.data.manifest.clone().ok_or(e))
        .context("the checkpoint does not record its dataset either")?;
    load_manifest(&path)
}

pub fn split(m: &DatasetManifest, name: &str) -> Result<Vec<SkeletonSequence>> {
    load_split(m, name).with_context(|| format!("loading split {name:?}"))
}

fn distinct_ids(seqs: &[SkeletonSequence]) -> usize {
    seqs.iter().map(|s| s.id.as_str()).collect::<BTreeSet<_>>().len()
}

pub fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<PathBuf> {
    let spec = SynthSpec {
        classes: a.classes.unwrap_or(ctx.cfg.synth.classes),
        per_class: a.per_class.unwrap_or(ctx.cfg.synth.per_class),
        frames: a.frames.unwrap_or(ctx.cfg.synth.frames),
        joints: a.joints.unwrap_or(ctx.cfg.synth.joints),
        untrimmed_videos: a.untrimmed_videos.unwrap_or(ctx.cfg.synth.untrimmed_videos),
        ..ctx.cfg.synth.clone()
    };
    let data = synth_dataset(&spec)?;
    let manifest = data.write(&ctx.out_dir).with_context(|| format!("writing dataset to {}", ctx.out_dir.display()))?;
    let mut r = RunReport::new("synth", ctx.digest.clone(), spec.seed);
    r.metric("train_samples", distinct_ids(&data.train) as f64);
    r.metric("test_samples", distinct_ids(&data.test) as f64);
    r.metric("train_records", data.train.len() as f64);
    r.metric("test_records", data.test.len() as f64);
    r.metric("untrimmed_train_videos", data.untrimmed_train.len() as f64);
    r.metric("untrimmed_test_videos", data.untrimmed_test.len() as f64);
    r.artifact("manifest", &manifest);
    finish(ctx, r)
}

pub fn pretrain(ctx: &Ctx, a: &PretrainArgs) -> Result<PathBuf> {
    let mut cfg: PretrainConfig = ctx.cfg.pretrain();
    let manifest_path = config::manifest_path(a.data.as_ref(), &ctx.cfg)?;
    let manifest = load_manifest(&manifest_path)?;
    // resumed runs compare configurations, so record one spelling of the path
    cfg.data.manifest = Some(std::fs::canonicalize(&manifest_path).unwrap_or(manifest_path));
    let ckpt_path = cfg.train.checkpoint.clone().unwrap_or_else(|| ctx.out_dir.join("checkpoint.ckpt"));
    let log_path = cfg.train.log.clone().unwrap_or_else(|| ctx.out_dir.join("loss.jsonl"));
    cfg.train.checkpoint = Some(ckpt_path.clone());
    cfg.train.log = Some(log_path.clone());
    if manifest.joint_count != cfg.encoder.joints {
        bail!("dataset has {} joints but encoder.joints = {}", manifest.joint_count, cfg.encoder.joints);
    }
    let records = split(&manifest, &cfg.data.split)?;
    let _lock = FileLock::acquire(&ckpt_path)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            Trainer::resume(&ckpt, Some(cfg.clone()), records)?
        }
        None => Trainer::new(cfg.clone(), &manifest.edges, records)?,
    };
    let start_epoch = trainer.epoch;
    let logs = trainer.fit()?;
    let mut r = RunReport::new("pretrain", ctx.digest.clone(), cfg.train.seed);
    r.metric("epochs", (trainer.epoch - start_epoch) as f64);
    r.metric("steps", logs.len() as f64);
    if let (Some(first), Some(last)) = (logs.first(), logs.last()) {
        r.metric("first_loss", first.loss.total);
        r.metric("final_loss", last.loss.total);
        r.metric("final_con", last.loss.con);
        r.metric("final_var", last.loss.var);
        r.metric("final_autocov", last.loss.autocov);
        r.metric("final_xcorr", last.loss.xcorr);
    }
    r.artifact("checkpoint", &ckpt_path);
    r.artifact("loss_log", &log_path);
    finish(ctx, r)
}

pub fn export(ctx: &Ctx, a: &ExportArgs) -> Result<PathBuf> {
    let (saved, model, store) = load_model(&a.checkpoint)?;
    let manifest = eval_manifest(a.data.as_ref(), ctx, &saved)?;
    let seqs = split(&manifest, &a.split)?;
    for s in &seqs {
        model.check_record(s)?;
    }
    let rows = model.embed_all(&store, &seqs, Exec::available())?;
    let out = a.out.clone().unwrap_or_else(|| ctx.out_dir.join("embeddings.csv"));
    let mut w = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
    let dim = model.encoder.embedding_dim();
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|j| format!("e{j}")));
    w.write_record(&header)?;
    for (s, e) in seqs.iter().zip(&rows) {
        let mut rec = vec![s.id.clone(), s.label.map_or(String::new(), |l| l.to_string())];
        // Display of f64 is the shortest string that parses back to the same bits
        rec.extend(e.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut r = RunReport::new("export-embeddings", ctx.digest.clone(), saved.pretrain.train.seed);
    r.metric("rows", rows.len() as f64);
    r.metric("dim", dim as f64);
    r.artifact("embeddings", &out);
    finish(ctx, r)
}

pub fn gradcheck(ctx: &Ctx, a: &GradcheckArgs) -> Result<PathBuf> {
    let seed = ctx.cfg.train.seed;
    let mut cfg = if a.profile == "tiny" { PretrainConfig::tiny() } else { ctx.cfg.pretrain() };
    cfg.train.seed = seed;
    let e = &cfg.encoder;
    let spec = SynthSpec {
        classes: 3,
        per_class: a.batch.max(2),
        frames: 2 * e.frames,
        joints: e.joints,
        persons: e.persons,
        coords: e.coords,
        seed,
        ..SynthSpec::default()
    };
    let data = synth_dataset(&spec)?;
    let trainer = Trainer::new(cfg, &data.manifest.edges, data.train)?;
    let batch: Vec<usize> = trainer.batches(0).into_iter().flatten().take(a.batch.max(2)).collect();
    let copies = trainer.copies(&batch, 0)?;
    let rep = finite_diff_check(&trainer.model, &trainer.store, &copies, &trainer.cfg.loss, a.step, a.per_array.unwrap_or(usize::MAX), a.floor)?;
    let table = ctx.out_dir.join("gradcheck.per_param.json");
    std::fs::write(&table, serde_json::to_string_pretty(&rep.per_param)? + "\n").with_context(|| format!("writing {}", table.display()))?;
    let passed = rep.passes(a.tolerance);
    println!(
        "gradient check {}: max relative error {:.3e} in {} over {} entries ({} skipped across a kink)",
        if passed { "passed" } else { "FAILED" },
        rep.max_rel_err,
        rep.worst,
        rep.checked,
        rep.straddled
    );
    let mut r = RunReport::new("gradcheck", ctx.digest.clone(), seed);
    r.metric("max_rel_err", rep.max_rel_err);
    r.metric("checked", rep.checked as f64);
    r.metric("straddled", rep.straddled as f64);
    r.metric("tolerance", a.tolerance);
    r.metric("passed", f64::from(u8::from(passed)));
    r.artifact("per_param", &table);
    finish(ctx, r)
}

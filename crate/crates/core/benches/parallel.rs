//! Sequential vs rayon execution of the two hot loops: one pretraining
//! batch (forward, loss, backward) and embedding a split.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use usdrl::parallel::Exec;
use usdrl::pretrain::{batch_loss, PretrainConfig, Trainer};
use usdrl::skelio::{synth_dataset, SynthSpec};

fn bench(c: &mut Criterion) {
    let data = synth_dataset(&SynthSpec { classes: 4, per_class: 8, ..SynthSpec::default() }).unwrap();
    let trainer = Trainer::new(PretrainConfig::desk(), &data.manifest.edges, data.train.clone()).unwrap();
    let batch = trainer.batches(0)[0].clone();
    let copies = trainer.copies(&batch, 0).unwrap();

    let mut g = c.benchmark_group("batch_loss");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| batch_loss(&trainer.model, &trainer.store, &copies, &trainer.cfg.loss, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("embed_all");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| trainer.model.embed_all(&trainer.store, &data.test, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);

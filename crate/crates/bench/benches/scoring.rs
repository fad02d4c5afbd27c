use asdplda_bench::Fixture;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn scoring(c: &mut Criterion) {
    let fx = Fixture::new();
    let set = fx.eval_set();
    let mut group = c.benchmark_group("batch-scoring");
    for n in [1_000, 10_000] {
        let trials = fx.eval_trials(n);
        group.throughput(Throughput::Elements(trials.len() as u64));
        group.bench_with_input(BenchmarkId::new("plda-global", trials.len()), &trials, |b, t| {
            b.iter(|| fx.plda.score_trials(set, t).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("as-dplda", trials.len()), &trials, |b, t| {
            b.iter(|| fx.model.score_trials(set, None, t).unwrap())
        });
    }
    group.finish();

    let trials = fx.tbc_trials();
    let mut group = c.benchmark_group("tbc-scoring");
    group.sample_size(10);
    group.throughput(Throughput::Elements(trials.len() as u64));
    group.bench_with_input(BenchmarkId::new("tbc", trials.len()), &trials, |b, t| b.iter(|| fx.tbc.score_trials(set, t).unwrap()));
    group.finish();
}

criterion_group!(benches, scoring);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, Criterion};

use bringme::bench::{run_experiment, Experiment};

fn grid(c: &mut Criterion) {
    let mut experiment = Experiment::builtin();
    experiment.spec.repetitions = 2;
    let mut group = c.benchmark_group("grid");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| run_experiment(&experiment, 1)));
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| b.iter(|| run_experiment(&experiment, 0)));
    group.finish();
}

criterion_group!(benches, grid);
criterion_main!(benches);

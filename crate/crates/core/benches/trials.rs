use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rankmon::harness::experiments::run_trial;
use rankmon::harness::{run_trials, run_trials_sequential, Experiment, Protocol};
use rankmon::Config;

fn runners(c: &mut Criterion) {
    let mut group = c.benchmark_group("trials");
    group.sample_size(10);
    for (protocol, n) in [(Protocol::TopK, 4096), (Protocol::CoFaSel, 1 << 16), (Protocol::SeleMonRefresh, 1 << 16)] {
        let mut exp = Experiment::new(protocol, Config::new(n).with_seed(9));
        exp.m = 256;
        let trials = 64;
        group.bench_with_input(BenchmarkId::new("parallel", protocol.tag()), &exp, |b, exp| {
            b.iter(|| run_trials(trials, |t| run_trial(exp, t, false).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("sequential", protocol.tag()), &exp, |b, exp| {
            b.iter(|| run_trials_sequential(trials, |t| run_trial(exp, t, false).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, runners);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gff_core::montecarlo::{run_point, ExperimentKind, ExperimentSpec};
use gff_core::par::Execution;

fn one_arm_point(c: &mut Criterion) {
    let mut spec = ExperimentSpec::new(ExperimentKind::OneArm, 3, vec![4], 512, 1);
    spec.batch_size = 32;
    let point = spec.points().remove(0);
    let mut group = c.benchmark_group("one_arm_N4_512_replicas");
    group.sample_size(10);
    for (name, exec) in [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel { threads: 0 }),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_point(&spec, &point, exec).unwrap())
        });
    }
    group.finish();
}

fn crossing_point(c: &mut Criterion) {
    let mut spec = ExperimentSpec::new(ExperimentKind::Crossing, 3, vec![6], 256, 2);
    spec.inner = vec![2];
    spec.batch_size = 16;
    let point = spec.points().remove(0);
    let mut group = c.benchmark_group("crossing_N6_256_replicas");
    group.sample_size(10);
    for (name, exec) in [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel { threads: 0 }),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_point(&spec, &point, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, one_arm_point, crossing_point);
criterion_main!(benches);

//! Timed-simulation throughput: whole-platform runs of representative
//! workloads, reported as wall time per run (instructions per second is
//! the `kips` row of the same runs via the CLI).

use criterion::{criterion_group, criterion_main, Criterion};
use gsim_bench::spec;
use gsim_core::runner::{run, Mode};

fn engine_benches(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("fir_r9nano", |b| {
        b.iter(|| run(spec("fir", "r9nano", Mode::Simulate, 1, &[])).unwrap())
    });
    g.bench_function("aes_dmgpu", |b| {
        b.iter(|| run(spec("aes", "dmgpu", Mode::Simulate, 1, &[])).unwrap())
    });
    g.bench_function("mt_r9nano_parallel4", |b| {
        b.iter(|| run(spec("mt", "r9nano", Mode::Simulate, 4, &[("width", 512)])).unwrap())
    });
    g.finish();
}

criterion_group!(benches, engine_benches);
criterion_main!(benches);

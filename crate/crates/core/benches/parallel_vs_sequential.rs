use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use saev_core::fixtures::oracle_scenario;
use saev_core::mpc::{run, MpcOptions, Scenario};
use saev_core::par::{self, Execution};

fn closed_loop_batch(c: &mut Criterion) {
    let scenarios: Vec<Scenario> = (0..16).map(|seed| oracle_scenario(seed, seed % 2 == 1)).collect();
    let opts = MpcOptions::default();
    let mut group = c.benchmark_group("closed_loop_batch");
    group.sample_size(10);
    let modes = [("sequential", Execution::Sequential), ("parallel", Execution::default())];
    for (name, exec) in modes {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| par::map(exec, &scenarios, |s| run(s, &opts).map(|t| t.closed_loop_cost()).unwrap_or(f64::NAN)))
        });
    }
    group.finish();
}

criterion_group!(benches, closed_loop_batch);
criterion_main!(benches);

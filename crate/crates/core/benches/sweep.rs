//! Parallel vs sequential sweep over trials. On a single core the two should
//! be close; the gap grows with available cores when `parallel` is enabled.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use carbonsched::experiment::{Experiment, ExperimentConfig, SweepAxis};
use carbonsched::par;

const CONFIG: &str = r#"
seed = 11
record_events = false
[cluster]
executors = 10
[trace]
kind = "square-wave"
low = 50.0
high = 500.0
period_steps = 6
n_steps = 600
[workload]
kind = "generate"
[workload.params]
n_jobs = 30
mean_interarrival_s = 600.0
[workload.params.dag_model]
kind = "template-library"
scales = ["gb2", "gb10", "gb50"]
duration_multiplier = 10.0
[policy]
name = "pcaps"
gamma = 0.5
[trials]
reserve_steps = 200
"#;

fn sweep(c: &mut Criterion) {
    let exp = Experiment::prepare(ExperimentConfig::from_toml(CONFIG).unwrap()).unwrap();
    let axis = SweepAxis::Gamma(vec![0.25, 0.5, 0.9]);
    let trials: Vec<u32> = (0..8).collect();
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    let label = if par::is_parallel() { "rayon" } else { "rayon-disabled" };
    g.bench_function(label, |b| b.iter(|| black_box(exp.sweep(&axis, &trials).unwrap())));
    g.bench_function("sequential", |b| {
        b.iter(|| black_box(exp.sweep_sequential(&axis, &trials).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);

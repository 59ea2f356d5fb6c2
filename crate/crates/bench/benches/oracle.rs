use criterion::{criterion_group, criterion_main, Criterion};
use dlsched::special::{exact_policy_throughput, exact_priority_two_queue, single_buffer_config};
use dlsched::{build_occupation_lp, optimal_value, presets, ZooPolicy};

fn lp(c: &mut Criterion) {
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    let table1 = presets::table1();
    g.bench_function("build/table1", |b| {
        b.iter(|| build_occupation_lp(&table1).unwrap())
    });
    let built = build_occupation_lp(&table1).unwrap();
    g.bench_function("solve/table1", |b| b.iter(|| built.solve().unwrap()));
    let sb = single_buffer_config(&[0.1, 0.2, 0.4, 0.5, 0.7, 0.8], 2).unwrap();
    g.bench_function("optimal_value/single_buffer_6", |b| {
        b.iter(|| optimal_value(&sb).unwrap())
    });
    g.finish();
}

fn chains(c: &mut Criterion) {
    c.bench_function("exact_priority_two_queue", |b| {
        b.iter(|| exact_priority_two_queue(0.5, 0.25).unwrap())
    });
    let lambdas = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
    c.bench_function("exact_policy_throughput/max_lambda_8", |b| {
        b.iter(|| exact_policy_throughput(&ZooPolicy::MaxLambda, &lambdas, 3).unwrap())
    });
}

criterion_group!(benches, lp, chains);
criterion_main!(benches);
